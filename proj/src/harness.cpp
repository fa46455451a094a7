#include "llmseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>

#include "llmseg/error.hpp"
#include "llmseg/rng.hpp"

namespace llmseg {

namespace {

constexpr int kSampleIndexVersion = 1;

struct Rect {
    std::ptrdiff_t r0, c0, r1, c1;

    bool overlaps(const Rect& o, std::ptrdiff_t gap) const {
        return r0 < o.r1 + gap && o.r0 < r1 + gap && c0 < o.c1 + gap && o.c0 < c1 + gap;
    }
};

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : v) {
            x = rng.normal();
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

std::string sample_id(std::size_t i) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "s%06zu", i);
    return buffer;
}

SyntheticSample synth_one(std::size_t index, const SynthConfig& cfg, const std::vector<std::vector<double>>& palette,
                          Rng& rng) {
    const auto canvas = static_cast<std::ptrdiff_t>(cfg.canvas);
    const auto jitter = static_cast<std::ptrdiff_t>(cfg.jitter);

    std::vector<Rect> objects;
    const std::size_t wanted = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(cfg.min_objects), static_cast<std::int64_t>(cfg.max_objects)));
    while (objects.size() < cfg.min_objects) {
        objects.clear();
        for (std::size_t o = 0; o < wanted; ++o) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                const auto h = rng.uniform_int(static_cast<std::int64_t>(cfg.min_object_side),
                                               static_cast<std::int64_t>(cfg.max_object_side));
                const auto w = rng.uniform_int(static_cast<std::int64_t>(cfg.min_object_side),
                                               static_cast<std::int64_t>(cfg.max_object_side));
                const auto r0 = rng.uniform_int(0, canvas - h);
                const auto c0 = rng.uniform_int(0, canvas - w);
                const Rect candidate{r0, c0, r0 + h, c0 + w};
                const bool clash = std::any_of(objects.begin(), objects.end(),
                                               [&](const Rect& o2) { return candidate.overlaps(o2, 2); });
                if (!clash) {
                    objects.push_back(candidate);
                    break;
                }
            }
        }
    }

    std::vector<BinaryMask> object_masks;
    for (const Rect& r : objects) object_masks.push_back(BinaryMask::rectangle(cfg.canvas, cfg.canvas, r.r0, r.c0, r.r1, r.c1));

    // Features: coverage-weighted blend of object vectors over a noisy background.
    std::vector<std::vector<double>> vectors;
    if (cfg.palette_size == 0) {
        for (std::size_t o = 0; o < objects.size(); ++o) vectors.push_back(random_unit(cfg.channels, rng));
    } else {
        // Objects draw distinct categories from a corpus-independent palette,
        // then get a per-instance perturbation.
        std::vector<std::size_t> categories(cfg.palette_size);
        for (std::size_t i = 0; i < categories.size(); ++i) categories[i] = i;
        rng.shuffle(categories);
        for (std::size_t o = 0; o < objects.size(); ++o) {
            std::vector<double> v = palette[categories[o]];
            double norm = 0.0;
            for (double& x : v) {
                x += cfg.instance_noise * rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
            vectors.push_back(std::move(v));
        }
    }
    const std::vector<double> background = random_unit(cfg.channels, rng);
    std::vector<std::vector<double>> coverage;
    for (const BinaryMask& m : object_masks) coverage.push_back(coverage_weights(m, cfg.grid, cfg.grid));
    FeatureGrid features(cfg.grid, cfg.grid, cfg.channels);
    for (std::size_t i = 0; i < cfg.grid; ++i) {
        for (std::size_t j = 0; j < cfg.grid; ++j) {
            const std::size_t cell_index = i * cfg.grid + j;
            double covered = 0.0;
            std::vector<double> f(cfg.channels, 0.0);
            for (std::size_t o = 0; o < objects.size(); ++o) {
                const double w = coverage[o][cell_index];
                covered += w;
                for (std::size_t c = 0; c < cfg.channels; ++c) f[c] += w * vectors[o][c];
            }
            auto cell = features.cell(i, j);
            for (std::size_t c = 0; c < cfg.channels; ++c) {
                const double noise = cfg.background_noise > 0.0 ? cfg.background_noise * rng.normal() : 0.0;
                cell[c] = static_cast<float>(f[c] + (1.0 - covered) * (background[c] + noise));
            }
        }
    }

    // Targets.
    std::vector<std::size_t> order(objects.size());
    for (std::size_t o = 0; o < order.size(); ++o) order[o] = o;
    rng.shuffle(order);
    const std::size_t max_t = std::min(cfg.max_targets, objects.size());
    const std::size_t n_targets = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(std::min(cfg.min_targets, max_t)), static_cast<std::int64_t>(max_t)));
    std::vector<BinaryMask> target_masks;
    std::vector<double> seg(cfg.channels, 0.0);
    for (std::size_t t = 0; t < n_targets; ++t) {
        target_masks.push_back(object_masks[order[t]]);
        for (std::size_t c = 0; c < cfg.channels; ++c) seg[c] += vectors[order[t]][c] / static_cast<double>(n_targets);
    }
    for (double& v : seg) {
        if (cfg.seg_noise > 0.0) v += cfg.seg_noise * rng.normal();
        v = static_cast<float>(v);
    }

    SyntheticSample s;
    s.image_id = sample_id(index);
    s.gt = union_masks(target_masks);
    s.features = std::move(features);
    s.seg = std::move(seg);
    s.proposals.image_id = s.image_id;
    s.proposals.image_h = cfg.canvas;
    s.proposals.image_w = cfg.canvas;

    const auto edge_offset = [&]() -> std::ptrdiff_t {
        if (jitter == 0) return 0;
        const double draw = std::round(rng.normal() * static_cast<double>(jitter) / 4.0);
        return std::clamp(static_cast<std::ptrdiff_t>(draw), -jitter, jitter);
    };
    const auto point_of = [](const Rect& r) {
        return std::make_pair(static_cast<std::uint32_t>((r.r0 + r.r1) / 2), static_cast<std::uint32_t>((r.c0 + r.c1) / 2));
    };
    for (std::size_t o = 0; o < objects.size(); ++o) {
        const Rect& base = objects[o];
        Rect r{};
        do {
            r = {base.r0 + edge_offset(), base.c0 + edge_offset(), base.r1 + edge_offset(), base.c1 + edge_offset()};
            r = {std::clamp<std::ptrdiff_t>(r.r0, 0, canvas), std::clamp<std::ptrdiff_t>(r.c0, 0, canvas),
                 std::clamp<std::ptrdiff_t>(r.r1, 0, canvas), std::clamp<std::ptrdiff_t>(r.c1, 0, canvas)};
        } while (r.r1 <= r.r0 || r.c1 <= r.c0);
        MaskProposal p;
        p.mask = BinaryMask::rectangle(cfg.canvas, cfg.canvas, r.r0, r.c0, r.r1, r.c1);
        p.predicted_iou = iou(p.mask, object_masks[o]);
        p.source_point = point_of(r);
        s.proposals.proposals.push_back(std::move(p));
    }
    // Distractors sit on background where possible; small canvases may force overlap.
    const std::int64_t min_side = std::min<std::int64_t>(4, canvas);
    for (std::size_t d = 0; d < cfg.distractors; ++d) {
        Rect r{};
        for (int attempt = 0; attempt < 100; ++attempt) {
            const std::int64_t max_side = std::max(min_side, canvas / 2 - attempt * canvas / 200);
            const auto h = rng.uniform_int(min_side, max_side);
            const auto w = rng.uniform_int(min_side, max_side);
            const auto r0 = rng.uniform_int(0, canvas - h);
            const auto c0 = rng.uniform_int(0, canvas - w);
            r = {r0, c0, r0 + h, c0 + w};
            const bool clash =
                std::any_of(objects.begin(), objects.end(), [&](const Rect& o) { return r.overlaps(o, 0); });
            if (!clash) break;
        }
        MaskProposal p;
        p.mask = BinaryMask::rectangle(cfg.canvas, cfg.canvas, r.r0, r.c0, r.r1, r.c1);
        p.predicted_iou = rng.uniform(0.7, 1.0);
        p.source_point = point_of(r);
        s.proposals.proposals.push_back(std::move(p));
    }
    rng.shuffle(s.proposals.proposals);
    s.targets = label_targets(s.proposals, s.gt);
    return s;
}

std::uint64_t json_u64(const json& v, const char* key) {
    try {
        return v.get<std::uint64_t>();
    } catch (const json::exception&) {
        fail(ErrorCode::InvalidConfig, std::string(key) + " must be a nonnegative integer");
    }
}

}  // namespace

// ------------------------------------------------------------- samples

void SynthConfig::validate() const {
    const auto bad = [](const std::string& m) { fail(ErrorCode::InvalidConfig, m); };
    if (canvas == 0 || grid == 0 || channels == 0) bad("canvas, grid and channels must be positive");
    if (min_objects < 1 || min_objects > max_objects) bad("object count range is empty");
    if (min_targets < 1 || min_targets > max_targets) bad("target count range is empty");
    if (min_targets > min_objects) bad("min_targets exceeds min_objects");
    if (min_object_side < 1 || min_object_side > max_object_side || max_object_side > canvas) {
        bad("object side range must lie within the canvas");
    }
    if (min_object_side * min_objects > canvas * 2) bad("objects cannot be packed onto the canvas");
    if (!(seg_noise >= 0.0) || !(background_noise >= 0.0) || !(instance_noise >= 0.0)) {
        bad("noise levels must be nonnegative");
    }
    if (palette_size != 0 && palette_size < max_objects) bad("palette_size must be 0 or at least max_objects");
}

json synth_config_to_json(const SynthConfig& c) {
    return json{{"canvas", c.canvas},
                {"grid", c.grid},
                {"channels", c.channels},
                {"min_objects", c.min_objects},
                {"max_objects", c.max_objects},
                {"min_targets", c.min_targets},
                {"max_targets", c.max_targets},
                {"min_object_side", c.min_object_side},
                {"max_object_side", c.max_object_side},
                {"jitter", c.jitter},
                {"distractors", c.distractors},
                {"seg_noise", c.seg_noise},
                {"background_noise", c.background_noise},
                {"palette_size", c.palette_size},
                {"palette_seed", c.palette_seed},
                {"instance_noise", c.instance_noise}};
}

SynthConfig synth_config_from_json(const json& value, const SynthConfig& base) {
    if (!value.is_object()) fail(ErrorCode::InvalidConfig, "synth config must be a JSON object");
    SynthConfig c = base;
    for (const auto& [key, v] : value.items()) {
        if (key == "canvas") c.canvas = json_u64(v, "canvas");
        else if (key == "grid") c.grid = json_u64(v, "grid");
        else if (key == "channels") c.channels = json_u64(v, "channels");
        else if (key == "min_objects") c.min_objects = json_u64(v, "min_objects");
        else if (key == "max_objects") c.max_objects = json_u64(v, "max_objects");
        else if (key == "min_targets") c.min_targets = json_u64(v, "min_targets");
        else if (key == "max_targets") c.max_targets = json_u64(v, "max_targets");
        else if (key == "min_object_side") c.min_object_side = json_u64(v, "min_object_side");
        else if (key == "max_object_side") c.max_object_side = json_u64(v, "max_object_side");
        else if (key == "jitter") c.jitter = json_u64(v, "jitter");
        else if (key == "distractors") c.distractors = json_u64(v, "distractors");
        else if (key == "seg_noise" && v.is_number()) c.seg_noise = v.get<double>();
        else if (key == "background_noise" && v.is_number()) c.background_noise = v.get<double>();
        else if (key == "palette_size") c.palette_size = json_u64(v, "palette_size");
        else if (key == "palette_seed") c.palette_seed = json_u64(v, "palette_seed");
        else if (key == "instance_noise" && v.is_number()) c.instance_noise = v.get<double>();
        else fail(ErrorCode::InvalidConfig, "bad synth config key '" + key + "'");
    }
    c.validate();
    return c;
}

std::vector<SyntheticSample> synth_generate(std::size_t n, const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    Rng palette_rng(config.palette_seed);
    std::vector<std::vector<double>> palette;
    for (std::size_t i = 0; i < config.palette_size; ++i) palette.push_back(random_unit(config.channels, palette_rng));
    Rng rng(seed);
    std::vector<SyntheticSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(synth_one(i, config, palette, rng));
    return out;
}

void save_samples(std::span<const SyntheticSample> samples, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    json entries = json::array();
    for (const SyntheticSample& s : samples) {
        const json entry{{"image_id", s.image_id},
                         {"features", s.image_id + ".fgrd"},
                         {"proposals", s.image_id + ".proposals.json"},
                         {"gt", s.image_id + ".gt.json"},
                         {"seg", s.image_id + ".segv"}};
        save_feature_grid(s.features, dir / entry["features"].get<std::string>());
        save_proposal_set(s.proposals, dir / entry["proposals"].get<std::string>());
        write_file(dir / entry["gt"].get<std::string>(), mask_to_json(s.gt).dump() + "\n");
        save_seg_vector(s.seg, dir / entry["seg"].get<std::string>());
        entries.push_back(entry);
    }
    write_file(dir / "index.json", json{{"version", kSampleIndexVersion}, {"samples", entries}}.dump(1) + "\n");
}

std::vector<SyntheticSample> load_samples(const std::filesystem::path& dir) {
    const std::filesystem::path index_path = dir / "index.json";
    if (!std::filesystem::is_regular_file(index_path)) fail(ErrorCode::DataMissing, "no sample index at " + index_path.string());
    const json index = parse_json(read_file(index_path), index_path.string());
    std::vector<SyntheticSample> out;
    try {
        if (index.value("version", kSampleIndexVersion) != kSampleIndexVersion) {
            fail(ErrorCode::SchemaVersionMismatch, "sample index version " + index["version"].dump());
        }
        for (const json& e : index.at("samples")) {
            SyntheticSample s;
            s.image_id = e.at("image_id").get<std::string>();
            s.features = load_feature_grid(dir / e.at("features").get<std::string>());
            s.proposals = load_proposal_set(dir / e.at("proposals").get<std::string>());
            const std::filesystem::path gt_path = dir / e.at("gt").get<std::string>();
            try {
                s.gt = mask_from_json(parse_json(read_file(gt_path), gt_path.string()));
            } catch (const Error& err) {
                if (err.code() == ErrorCode::LengthMismatch) fail(ErrorCode::ParseError, gt_path.string() + ": " + err.what());
                throw;
            }
            s.seg = load_seg_vector(dir / e.at("seg").get<std::string>());
            s.targets = label_targets(s.proposals, s.gt);
            out.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, index_path.string() + ": " + e.what());
    }
    return out;
}

Tensor2 proposal_embeddings(const SyntheticSample& sample) {
    Tensor2 out(sample.proposals.size(), sample.features.channels());
    for (std::size_t k = 0; k < sample.proposals.size(); ++k) {
        const PooledEmbedding e = mask_pool(sample.features, sample.proposals.proposals[k].mask);
        std::copy(e.values.begin(), e.values.end(), out.row(k).begin());
    }
    return out;
}

// ------------------------------------------------------------ training

void RunConfig::validate() const {
    model.validate();
    if (steps < 1) fail(ErrorCode::InvalidConfig, "steps must be at least 1");
    if (grad_accumulation < 1) fail(ErrorCode::InvalidConfig, "grad_accumulation must be at least 1");
    if (batch_size < 1) fail(ErrorCode::InvalidConfig, "batch_size must be at least 1");
    if (optimizer.warmup_steps > steps) fail(ErrorCode::InvalidConfig, "warmup_steps exceeds steps");
    if (!(optimizer.base_lr >= 0.0)) fail(ErrorCode::InvalidConfig, "base_lr must be nonnegative");
}

json run_config_to_json(const RunConfig& c) {
    return json{{"model", model_config_to_json(c.model)},
                {"optimizer",
                 {{"base_lr", c.optimizer.base_lr},
                  {"beta1", c.optimizer.beta1},
                  {"beta2", c.optimizer.beta2},
                  {"epsilon", c.optimizer.epsilon},
                  {"weight_decay", c.optimizer.weight_decay},
                  {"warmup_steps", c.optimizer.warmup_steps}}},
                {"steps", c.steps},
                {"grad_accumulation", c.grad_accumulation},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"train_data", c.train_data},
                {"eval_data", c.eval_data},
                {"checkpoint", c.checkpoint},
                {"report", c.report}};
}

RunConfig run_config_from_json(const json& value) {
    if (!value.is_object()) fail(ErrorCode::InvalidConfig, "run config must be a JSON object");
    RunConfig c;
    try {
        for (const auto& [key, v] : value.items()) {
            if (key == "model") {
                c.model = model_config_from_json(v, ModelConfig::desk());
            } else if (key == "optimizer") {
                for (const auto& [okey, ov] : v.items()) {
                    if (okey == "base_lr") c.optimizer.base_lr = ov.get<double>();
                    else if (okey == "beta1") c.optimizer.beta1 = ov.get<double>();
                    else if (okey == "beta2") c.optimizer.beta2 = ov.get<double>();
                    else if (okey == "epsilon") c.optimizer.epsilon = ov.get<double>();
                    else if (okey == "weight_decay") c.optimizer.weight_decay = ov.get<double>();
                    else if (okey == "warmup_steps") c.optimizer.warmup_steps = json_u64(ov, "warmup_steps");
                    else fail(ErrorCode::InvalidConfig, "unknown optimizer key '" + okey + "'");
                }
            } else if (key == "steps") c.steps = json_u64(v, "steps");
            else if (key == "grad_accumulation") c.grad_accumulation = json_u64(v, "grad_accumulation");
            else if (key == "batch_size") c.batch_size = json_u64(v, "batch_size");
            else if (key == "seed") c.seed = json_u64(v, "seed");
            else if (key == "train_data") c.train_data = v.get<std::string>();
            else if (key == "eval_data") c.eval_data = v.get<std::string>();
            else if (key == "checkpoint") c.checkpoint = v.get<std::string>();
            else if (key == "report") c.report = v.get<std::string>();
            else fail(ErrorCode::InvalidConfig, "unknown run config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("run config: ") + e.what());
    }
    c.optimizer.total_steps = c.steps;
    c.validate();
    return c;
}

json step_log_to_json(const StepLog& e) {
    return json{{"step", e.step}, {"lr", e.lr}, {"l_iou", e.loss_iou}, {"l_iop", e.loss_iop}, {"total", e.total}};
}

TrainResult train(std::span<const SyntheticSample> samples, const RunConfig& config,
                  const std::function<void(const StepLog&)>& on_step) {
    config.validate();
    struct Prepared {
        Tensor2 embeddings;
        const SyntheticSample* sample;
    };
    std::vector<Prepared> data;
    for (const SyntheticSample& s : samples) {
        if (s.proposals.size() == 0) continue;
        if (s.features.channels() != config.model.model_dim || s.seg.size() != config.model.model_dim) {
            fail(ErrorCode::ShapeMismatch, "sample '" + s.image_id + "' has feature/SEG dim " +
                                               std::to_string(s.features.channels()) + ", model_dim is " +
                                               std::to_string(config.model.model_dim));
        }
        data.push_back({proposal_embeddings(s), &s});
    }
    if (data.empty()) fail(ErrorCode::DataMissing, "no training samples with proposals");

    TrainResult result{SelectionModel::initialize(config.model, config.seed), {}};
    SelectionModel& model = result.model;
    AdamWConfig opt = config.optimizer;
    opt.total_steps = config.steps;
    OptimizerState state(model.params(), opt);

    Rng order_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(data.size());
    std::size_t cursor = order.size();
    const auto next_sample = [&]() -> const Prepared& {
        if (cursor == order.size()) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            order_rng.shuffle(order);
            cursor = 0;
        }
        return data[order[cursor++]];
    };

    const std::size_t micro = config.grad_accumulation * config.batch_size;
    const double scale = 1.0 / static_cast<double>(micro);
    for (std::size_t step = 1; step <= config.steps; ++step) {
        model.params().zero_grad();
        double sum_iou = 0.0;
        double sum_iop = 0.0;
        for (std::size_t m = 0; m < micro; ++m) {
            const Prepared& p = next_sample();
            const LossBreakdown l =
                model.accumulate_gradients(p.embeddings, p.sample->seg, p.sample->targets, scale);
            sum_iou += l.iou;
            sum_iop += l.iop;
        }
        StepLog entry;
        entry.step = step;
        entry.loss_iou = sum_iou / static_cast<double>(micro);
        entry.loss_iop = sum_iop / static_cast<double>(micro);
        entry.total = total_loss(entry.loss_iou, entry.loss_iop, config.model);
        if (!std::isfinite(entry.total)) {
            fail(ErrorCode::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step) +
                                               " (l_iou " + std::to_string(entry.loss_iou) + ", l_iop " +
                                               std::to_string(entry.loss_iop) + ")");
        }
        entry.lr = adamw_step(model.params(), state);
        result.log.push_back(entry);
        if (on_step) on_step(entry);
    }
    model.quantize_to_float32();
    return result;
}

TrainResult train_from_files(const RunConfig& config, const std::filesystem::path& checkpoint_path,
                             const std::filesystem::path& log_path) {
    if (config.train_data.empty()) fail(ErrorCode::DataMissing, "run config has no train_data");
    const std::vector<SyntheticSample> samples = load_samples(config.train_data);
    TrainResult result = train(samples, config);
    std::string log;
    for (const StepLog& e : result.log) log += step_log_to_json(e).dump() + "\n";
    write_file(log_path, log);
    save_checkpoint(result.model, checkpoint_path);
    return result;
}

// ---------------------------------------------------------- evaluation

Strategy parse_strategy(std::string_view name) {
    if (name == "top1-iou") return Strategy::Top1Iou;
    if (name == "threshold-iop") return Strategy::ThresholdIop;
    if (name == "union") return Strategy::Union;
    if (name == "top5-threshold") return Strategy::Top5Threshold;
    if (name == "gt-top1") return Strategy::GtTop1;
    fail(ErrorCode::UnknownStrategy, "unknown strategy '" + std::string(name) + "'");
}

std::string_view strategy_name(Strategy strategy) {
    switch (strategy) {
        case Strategy::Top1Iou: return "top1-iou";
        case Strategy::ThresholdIop: return "threshold-iop";
        case Strategy::Union: return "union";
        case Strategy::Top5Threshold: return "top5-threshold";
        case Strategy::GtTop1: return "gt-top1";
    }
    return "unknown";
}

EvalResult evaluate(const SelectionModel& model, std::span<const SyntheticSample> samples, const EvalOptions& options) {
    if (samples.empty()) fail(ErrorCode::EmptyInput, "no evaluation samples");
    EvalResult result;
    result.samples.resize(samples.size());
    result.selections.resize(samples.size());

    const auto run_one = [&](std::size_t i) {
        const SyntheticSample& s = samples[i];
        IndexSet selected;
        if (s.proposals.size() > 0) {
            if (options.strategy == Strategy::GtTop1) {
                const TargetVector t = label_targets(s.proposals, s.gt);
                selected = {static_cast<std::size_t>(std::max_element(t.ious.begin(), t.ious.end()) - t.ious.begin())};
            } else {
                if (s.features.channels() != model.config().model_dim) {
                    fail(ErrorCode::ShapeMismatch, "sample '" + s.image_id + "' feature dim does not match the model");
                }
                const SelectionOutput out = model.forward(proposal_embeddings(s), s.seg);
                switch (options.strategy) {
                    case Strategy::Top1Iou: selected = select_top1_iou(out); break;
                    case Strategy::ThresholdIop: selected = select_threshold_iop(out, options.iop_threshold); break;
                    case Strategy::Union: selected = select_union_top1_threshold(out, options.iop_threshold); break;
                    case Strategy::Top5Threshold:
                        selected = select_threshold_from_top5(out, options.iop_threshold);
                        break;
                    case Strategy::GtTop1: break;
                }
            }
        }
        result.samples[i] = {predict_mask(s.proposals, selected), s.gt, s.image_id};
        result.selections[i] = std::move(selected);
    };

    const std::size_t threads = std::max<std::size_t>(1, options.threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < samples.size(); ++i) run_one(i);
    } else {
        std::vector<std::future<void>> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            workers.push_back(std::async(std::launch::async, [&, t] {
                for (std::size_t i = t; i < samples.size(); i += threads) run_one(i);
            }));
        }
        for (auto& w : workers) w.get();
    }
    result.report = build_report(result.samples, options.norm_size);
    return result;
}

void write_predictions(std::span<const EvalSample> samples, const std::filesystem::path& path) {
    std::string text;
    for (const EvalSample& s : samples) {
        text += json{{"image_id", s.image_id}, {"prediction", mask_to_json(s.prediction)}, {"gt", mask_to_json(s.ground_truth)}}
                    .dump() +
                "\n";
    }
    write_file(path, text);
}

std::vector<EvalSample> read_predictions(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::vector<EvalSample> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) {
            const json line = parse_json(std::string_view(text).substr(start, end - start), path.string());
            try {
                out.push_back({mask_from_json(line.at("prediction")), mask_from_json(line.at("gt")),
                               line.at("image_id").get<std::string>()});
            } catch (const json::exception& e) {
                fail(ErrorCode::ParseError, path.string() + ": " + e.what());
            }
        }
        start = end + 1;
    }
    return out;
}

// ----------------------------------------------------------- gradcheck

GradcheckReport gradcheck(std::uint64_t seed, const GradcheckOptions& options) {
    Rng rng(seed ^ 0xC0FFEEULL);
    GradcheckReport report;
    report.seed = seed;
    ModelConfig cfg;
    const std::size_t dim = rng.uniform01() < 0.5 ? 8 : 16;
    cfg.model_dim = dim;
    cfg.heads = 2;
    cfg.fusion_blocks = 2;
    cfg.fusion_hidden_dim = 2 * dim;
    cfg.iou_head_dims = {dim, dim, dim};
    cfg.iop_head_dims = {dim, 4, 1};
    report.config = cfg;
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(2, 8));
    report.proposals = k;

    SelectionModel model = SelectionModel::initialize(cfg, seed);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        for (double& v : model.params().value(i).values()) v += rng.uniform(-0.1, 0.1);
    }
    Tensor2 embeddings(k, dim);
    for (double& v : embeddings.values()) v = rng.normal();
    std::vector<double> seg(dim);
    for (double& v : seg) v = rng.normal();
    TargetVector targets;
    for (std::size_t r = 0; r < k; ++r) {
        targets.ious.push_back(rng.uniform01());
        targets.iops.push_back(rng.uniform01());
    }

    model.params().zero_grad();
    InputGrads input_grads;
    model.accumulate_gradients(embeddings, seg, targets, 1.0, &input_grads);

    const auto check_block = [&](const std::string& name, std::vector<double> analytic, std::span<const double> point,
                                 const std::function<double(std::span<const double>)>& f) {
        if (options.perturb_analytic) options.perturb_analytic(name, analytic);
        const std::vector<double> numeric = finite_diff_grad(f, point, options.step);
        BlockCheck b;
        b.name = name;
        b.elements = analytic.size();
        b.max_relative_error = max_relative_error(analytic, numeric);
        b.pass = b.max_relative_error <= options.tolerance;
        report.blocks.push_back(b);
    };

    SelectionModel probe = model;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto grad = model.params().grad(i).values();
        const auto original = model.params().value(i).values();
        check_block(model.params().name(i), {grad.begin(), grad.end()}, original, [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), probe.params().value(i).values().begin());
            const double loss = probe.loss(embeddings, seg, targets).total;
            std::copy(original.begin(), original.end(), probe.params().value(i).values().begin());
            return loss;
        });
    }
    check_block("input.embeddings", {input_grads.embeddings.values().begin(), input_grads.embeddings.values().end()},
                embeddings.values(), [&](std::span<const double> x) {
                    return model.loss(Tensor2(k, dim, std::vector<double>(x.begin(), x.end())), seg, targets).total;
                });
    check_block("input.seg", input_grads.seg, seg,
                [&](std::span<const double> x) { return model.loss(embeddings, x, targets).total; });

    report.pass = true;
    for (const BlockCheck& b : report.blocks) {
        report.worst = std::max(report.worst, b.max_relative_error);
        report.pass = report.pass && b.pass;
    }
    return report;
}

json gradcheck_to_json(const GradcheckReport& report) {
    json blocks = json::array();
    for (const BlockCheck& b : report.blocks) {
        blocks.push_back({{"name", b.name},
                          {"elements", b.elements},
                          {"max_relative_error", b.max_relative_error},
                          {"pass", b.pass}});
    }
    return json{{"seed", report.seed},
                {"model", model_config_to_json(report.config)},
                {"proposals", report.proposals},
                {"tolerance", kGradcheckTolerance},
                {"worst", report.worst},
                {"pass", report.pass},
                {"blocks", std::move(blocks)}};
}

void render_overlay(const BinaryMask& mask, const std::filesystem::path& path) { write_file(path, encode_pgm(mask)); }

}  // namespace llmseg
