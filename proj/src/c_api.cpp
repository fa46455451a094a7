#include "llmseg/llmseg.h"

#include <cstring>
#include <string>

#include "llmseg/dataset.hpp"
#include "llmseg/error.hpp"
#include "llmseg/harness.hpp"
#include "llmseg/io.hpp"
#include "llmseg/pipeline.hpp"

using namespace llmseg;

struct llmseg_mask {
    BinaryMask mask;
};

struct llmseg_proposals {
    ProposalSet set;
};

struct llmseg_model {
    SelectionModel model;
};

namespace {

thread_local std::string last_error;

llmseg_status to_status(ErrorCode code) { return static_cast<llmseg_status>(static_cast<int>(code) + 1); }

template <typename F>
llmseg_status guarded(F&& body) {
    try {
        body();
        return LLMSEG_OK;
    } catch (const Error& e) {
        last_error = e.what();
        return to_status(e.code());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return LLMSEG_INTERNAL_ERROR;
    } catch (const std::exception& e) {
        last_error = e.what();
        return LLMSEG_INTERNAL_ERROR;
    }
}

void require(bool condition, const char* what) {
    if (!condition) fail(ErrorCode::InvalidArgument, std::string(what) + " must not be null");
}

char* dup_string(const std::string& text) {
    char* out = static_cast<char*>(std::malloc(text.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, text.c_str(), text.size() + 1);
    return out;
}

void put_string(char** out, const std::string& text) {
    if (out != nullptr) *out = dup_string(text);
}

json parse_arg(const char* text, const char* what) {
    require(text != nullptr, what);
    return parse_json(text, what);
}

std::string template_path_or_default(const char* path) {
    return path != nullptr ? std::string(path) : std::string(LLMSEG_DATA_DIR) + "/question_template.txt";
}

}  // namespace

extern "C" {

const char* llmseg_version(void) { return "0.1.0"; }

const char* llmseg_status_name(llmseg_status status) {
    if (status == LLMSEG_OK) return "Ok";
    if (status == LLMSEG_INTERNAL_ERROR) return "InternalError";
    if (status < LLMSEG_OK || status > LLMSEG_INTERNAL_ERROR) return "Unknown";
    return error_code_name(static_cast<ErrorCode>(static_cast<int>(status) - 1)).data();
}

const char* llmseg_last_error(void) { return last_error.c_str(); }

void llmseg_string_free(char* text) { std::free(text); }

// ---------------------------------------------------------------- masks

llmseg_status llmseg_mask_create(uint32_t h, uint32_t w, const uint8_t* pixels, llmseg_mask** out) {
    return guarded([&] {
        require(out != nullptr, "out");
        require(pixels != nullptr || std::size_t{h} * w == 0, "pixels");
        BinaryMask m(h, w);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) m.set(r, c, pixels[r * w + c] != 0);
        }
        *out = new llmseg_mask{std::move(m)};
    });
}

llmseg_status llmseg_mask_from_json(const char* text, llmseg_mask** out) {
    return guarded([&] {
        require(out != nullptr, "out");
        *out = new llmseg_mask{mask_from_json(parse_arg(text, "mask json"))};
    });
}

llmseg_status llmseg_mask_load(const char* path, llmseg_mask** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "path/out");
        *out = new llmseg_mask{mask_from_json(parse_json(read_file(path), path))};
    });
}

void llmseg_mask_free(llmseg_mask* mask) { delete mask; }

llmseg_status llmseg_mask_shape(const llmseg_mask* mask, uint32_t* h, uint32_t* w) {
    return guarded([&] {
        require(mask != nullptr && h != nullptr && w != nullptr, "mask/h/w");
        *h = static_cast<uint32_t>(mask->mask.height());
        *w = static_cast<uint32_t>(mask->mask.width());
    });
}

llmseg_status llmseg_mask_area(const llmseg_mask* mask, uint64_t* area) {
    return guarded([&] {
        require(mask != nullptr && area != nullptr, "mask/area");
        *area = mask->mask.count();
    });
}

llmseg_status llmseg_mask_pixels(const llmseg_mask* mask, uint8_t* pixels, size_t capacity) {
    return guarded([&] {
        require(mask != nullptr && pixels != nullptr, "mask/pixels");
        const BinaryMask& m = mask->mask;
        if (capacity < m.height() * m.width()) fail(ErrorCode::InvalidSize, "pixel buffer too small");
        for (std::size_t r = 0; r < m.height(); ++r) {
            for (std::size_t c = 0; c < m.width(); ++c) pixels[r * m.width() + c] = m.get(r, c) ? 1 : 0;
        }
    });
}

llmseg_status llmseg_mask_to_json(const llmseg_mask* mask, char** out) {
    return guarded([&] {
        require(mask != nullptr && out != nullptr, "mask/out");
        *out = dup_string(mask_to_json(mask->mask).dump());
    });
}

llmseg_status llmseg_mask_iou(const llmseg_mask* a, const llmseg_mask* b, double* out) {
    return guarded([&] {
        require(a != nullptr && b != nullptr && out != nullptr, "a/b/out");
        *out = iou(a->mask, b->mask);
    });
}

llmseg_status llmseg_mask_iop(const llmseg_mask* gt, const llmseg_mask* pred, double* out) {
    return guarded([&] {
        require(gt != nullptr && pred != nullptr && out != nullptr, "gt/pred/out");
        *out = iop(pred->mask, gt->mask);
    });
}

llmseg_status llmseg_mask_render_pgm(const llmseg_mask* mask, const char* path) {
    return guarded([&] {
        require(mask != nullptr && path != nullptr, "mask/path");
        render_overlay(mask->mask, path);
    });
}

// ------------------------------------------------------------ proposals

llmseg_status llmseg_proposals_load(const char* path, llmseg_proposals** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "path/out");
        *out = new llmseg_proposals{load_proposal_set(path)};
    });
}

llmseg_status llmseg_proposals_save(const llmseg_proposals* set, const char* path) {
    return guarded([&] {
        require(set != nullptr && path != nullptr, "set/path");
        save_proposal_set(set->set, path);
    });
}

void llmseg_proposals_free(llmseg_proposals* set) { delete set; }

llmseg_status llmseg_proposals_count(const llmseg_proposals* set, size_t* count) {
    return guarded([&] {
        require(set != nullptr && count != nullptr, "set/count");
        *count = set->set.size();
    });
}

llmseg_status llmseg_proposals_mask(const llmseg_proposals* set, size_t index, llmseg_mask** out) {
    return guarded([&] {
        require(set != nullptr && out != nullptr, "set/out");
        if (index >= set->set.size()) fail(ErrorCode::IndexOutOfRange, "proposal index " + std::to_string(index));
        *out = new llmseg_mask{set->set.proposals[index].mask};
    });
}

llmseg_status llmseg_proposals_predicted_iou(const llmseg_proposals* set, size_t index, double* out) {
    return guarded([&] {
        require(set != nullptr && out != nullptr, "set/out");
        if (index >= set->set.size()) fail(ErrorCode::IndexOutOfRange, "proposal index " + std::to_string(index));
        *out = set->set.proposals[index].predicted_iou;
    });
}

llmseg_status llmseg_proposals_postprocess(const llmseg_proposals* set, double iou_filter, double nms_threshold,
                                           size_t max_proposals, llmseg_proposals** out) {
    return guarded([&] {
        require(set != nullptr && out != nullptr, "set/out");
        PostprocessConfig cfg{iou_filter, nms_threshold, max_proposals == 0 ? SIZE_MAX : max_proposals};
        *out = new llmseg_proposals{postprocess(set->set, cfg)};
    });
}

// ---------------------------------------------------------------- model

llmseg_status llmseg_model_load(const char* path, llmseg_model** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "path/out");
        *out = new llmseg_model{load_checkpoint(path)};
    });
}

llmseg_status llmseg_model_save(const llmseg_model* model, const char* path) {
    return guarded([&] {
        require(model != nullptr && path != nullptr, "model/path");
        save_checkpoint(model->model, path);
    });
}

void llmseg_model_free(llmseg_model* model) { delete model; }

llmseg_status llmseg_model_config_json(const llmseg_model* model, char** out) {
    return guarded([&] {
        require(model != nullptr && out != nullptr, "model/out");
        *out = dup_string(model_config_to_json(model->model.config()).dump());
    });
}

llmseg_status llmseg_model_forward(const llmseg_model* model, const double* embeddings, size_t k, const double* seg,
                                   size_t dim, double* similarities, double* iop_predictions) {
    return guarded([&] {
        require(model != nullptr && seg != nullptr, "model/seg");
        require(k == 0 || (embeddings != nullptr && similarities != nullptr && iop_predictions != nullptr),
                "embeddings/outputs");
        Tensor2 e(k, dim, std::vector<double>(embeddings, embeddings + k * dim));
        const SelectionOutput out = model->model.forward(e, std::span<const double>(seg, dim));
        std::copy(out.similarities.begin(), out.similarities.end(), similarities);
        std::copy(out.iop_predictions.begin(), out.iop_predictions.end(), iop_predictions);
    });
}

// -------------------------------------------------------------- harness

llmseg_status llmseg_synth(size_t n, uint64_t seed, const char* synth_config_json, const char* out_dir) {
    return guarded([&] {
        require(out_dir != nullptr, "out_dir");
        const SynthConfig cfg = synth_config_json != nullptr
                                    ? synth_config_from_json(parse_json(synth_config_json, "synth config"))
                                    : SynthConfig{};
        save_samples(synth_generate(n, cfg, seed), out_dir);
    });
}

llmseg_status llmseg_train(const char* run_config_json, const char* checkpoint_path, const char* log_path,
                           char** summary_json) {
    return guarded([&] {
        require(checkpoint_path != nullptr && log_path != nullptr, "checkpoint_path/log_path");
        const RunConfig cfg = run_config_from_json(parse_arg(run_config_json, "run config"));
        const TrainResult result = train_from_files(cfg, checkpoint_path, log_path);
        const std::size_t window = std::min<std::size_t>(100, result.log.size());
        double first = 0.0;
        double last = 0.0;
        for (std::size_t i = 0; i < window; ++i) {
            first += result.log[i].total;
            last += result.log[result.log.size() - window + i].total;
        }
        put_string(summary_json, json{{"steps", result.log.size()},
                                      {"window", window},
                                      {"first_total", first / static_cast<double>(window)},
                                      {"last_total", last / static_cast<double>(window)},
                                      {"checkpoint", checkpoint_path},
                                      {"log", log_path}}
                                     .dump());
    });
}

llmseg_status llmseg_evaluate(const char* checkpoint_path, const char* data_dir, const char* strategy,
                              double iop_threshold, size_t norm_size, size_t threads, const char* report_path,
                              const char* predictions_path, char** report_json) {
    return guarded([&] {
        require(checkpoint_path != nullptr && data_dir != nullptr && strategy != nullptr,
                "checkpoint_path/data_dir/strategy");
        EvalOptions options;
        options.strategy = parse_strategy(strategy);
        options.iop_threshold = iop_threshold;
        options.norm_size = norm_size;
        options.threads = threads;
        const SelectionModel model = load_checkpoint(checkpoint_path);
        const std::vector<SyntheticSample> samples = load_samples(data_dir);
        const EvalResult result = evaluate(model, samples, options);
        json report = report_to_json(result.report);
        report["strategy"] = std::string(strategy_name(options.strategy));
        report["iop_threshold"] = iop_threshold;
        const std::string text = report.dump(1) + "\n";
        if (report_path != nullptr) write_file(report_path, text);
        if (predictions_path != nullptr) write_predictions(result.samples, predictions_path);
        put_string(report_json, report.dump());
    });
}

llmseg_status llmseg_metrics_from_predictions(const char* predictions_path, size_t norm_size, char** report_json) {
    return guarded([&] {
        require(predictions_path != nullptr && report_json != nullptr, "predictions_path/report_json");
        *report_json = dup_string(report_to_json(build_report(read_predictions(predictions_path), norm_size)).dump());
    });
}

llmseg_status llmseg_gradcheck(uint64_t seed, char** report_json, int* passed) {
    return guarded([&] {
        const GradcheckReport report = gradcheck(seed);
        if (passed != nullptr) *passed = report.pass ? 1 : 0;
        put_string(report_json, gradcheck_to_json(report).dump());
    });
}

// -------------------------------------------------------------- dataset

llmseg_status llmseg_dataset_synth_corpus(size_t n, uint64_t seed, const char* out_path) {
    return guarded([&] {
        require(out_path != nullptr, "out_path");
        write_source_corpus(synth_source_corpus(n, seed), out_path);
    });
}

llmseg_status llmseg_dataset_sample(const char* config_json, const char* corpus_path, const char* out_path) {
    return guarded([&] {
        require(corpus_path != nullptr && out_path != nullptr, "corpus_path/out_path");
        const PipelineConfig cfg = pipeline_config_from_json(parse_arg(config_json, "pipeline config"));
        const std::vector<SourceRecord> corpus = read_source_corpus(corpus_path);
        write_file(out_path, selection_to_json(stratified_sample(corpus, cfg.counts, cfg.seed)).dump(1) + "\n");
    });
}

llmseg_status llmseg_dataset_prompts(const char* config_json, const char* corpus_path, const char* selection_path,
                                     const char* provider, const char* template_path, const char* out_path) {
    return guarded([&] {
        require(corpus_path != nullptr && provider != nullptr && out_path != nullptr,
                "corpus_path/provider/out_path");
        const PipelineConfig cfg = pipeline_config_from_json(parse_arg(config_json, "pipeline config"));
        std::vector<SourceRecord> records = read_source_corpus(corpus_path);
        if (selection_path != nullptr) {
            const SampleSelection selection =
                selection_from_json(parse_json(read_file(selection_path), selection_path));
            records = select_records(records, selection);
        }
        const PromptBundle bundle = load_prompt_bundle(template_path_or_default(template_path));
        const auto backend = make_provider(provider, cfg.questions_per_image);
        write_prompt_results(run_prompts(records, *backend, bundle, cfg), out_path);
    });
}

llmseg_status llmseg_dataset_assemble(const char* config_json, const char* corpus_path, const char* prompts_path,
                                      const char* out_path, char** diagnostics_json) {
    return guarded([&] {
        require(corpus_path != nullptr && prompts_path != nullptr && out_path != nullptr,
                "corpus_path/prompts_path/out_path");
        const PipelineConfig cfg = pipeline_config_from_json(parse_arg(config_json, "pipeline config"));
        const std::vector<SourceRecord> corpus = read_source_corpus(corpus_path);
        const std::vector<PromptResult> prompts = read_prompt_results(prompts_path);
        const AssembleResult assembled = assemble_manifest(corpus, prompts, cfg);
        write_manifest(assembled.manifest, out_path);
        put_string(diagnostics_json, json(assembled.diagnostics).dump());
    });
}

llmseg_status llmseg_dataset_stats(const char* manifest_path, char** stats_json, char** stats_text) {
    return guarded([&] {
        require(manifest_path != nullptr, "manifest_path");
        const DatasetStats stats = dataset_stats(read_manifest(manifest_path));
        put_string(stats_json, stats_to_json(stats).dump());
        put_string(stats_text, format_stats(stats));
    });
}

llmseg_status llmseg_dataset_run(const char* config_json, const char* corpus_path, const char* provider,
                                 const char* template_path, const char* out_path) {
    return guarded([&] {
        require(corpus_path != nullptr && provider != nullptr && out_path != nullptr,
                "corpus_path/provider/out_path");
        const PipelineConfig cfg = pipeline_config_from_json(parse_arg(config_json, "pipeline config"));
        const std::vector<SourceRecord> corpus = read_source_corpus(corpus_path);
        const PromptBundle bundle = load_prompt_bundle(template_path_or_default(template_path));
        const auto backend = make_provider(provider, cfg.questions_per_image);
        write_manifest(run_pipeline(corpus, cfg, *backend, bundle).assembled.manifest, out_path);
    });
}

}  // extern "C"
