#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "llmseg/error.hpp"
#include "llmseg/harness.hpp"
#include "oracles.hpp"

using namespace llmseg;

namespace {

RunConfig quick_run(std::size_t steps = 12) {
    RunConfig rc;
    rc.steps = steps;
    rc.grad_accumulation = 2;
    rc.optimizer.warmup_steps = 2;
    rc.optimizer.total_steps = steps;
    rc.seed = 4;
    return rc;
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("llmseg_harness_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("synthetic samples") {
    SynthConfig cfg;
    const std::vector<SyntheticSample> a = synth_generate(15, cfg, 3);
    CHECK(a == synth_generate(15, cfg, 3));
    CHECK_FALSE(a == synth_generate(15, cfg, 4));
    for (const SyntheticSample& s : a) {
        CHECK(s.targets == label_targets(s.proposals, s.gt));
        CHECK(s.seg.size() == cfg.channels);
        CHECK(s.features.channels() == cfg.channels);
        CHECK(s.gt.height() == cfg.canvas);
        CHECK(s.proposals.size() >= cfg.min_objects + cfg.distractors);
        // Each proposal's predicted_iou is not read from the ground truth.
        for (std::size_t k = 0; k < s.proposals.size(); ++k) {
            CHECK(s.targets.ious[k] == oracle::mask_iou(s.proposals.proposals[k].mask, s.gt));
        }
    }

    SynthConfig exact = cfg;
    exact.seg_noise = 0.0;
    exact.jitter = 0;
    exact.max_targets = 1;
    for (const SyntheticSample& s : synth_generate(20, exact, 8)) {
        bool found = false;
        for (std::size_t k = 0; k < s.targets.ious.size(); ++k) {
            found = found || (s.targets.ious[k] == 1.0 && s.targets.iops[k] == 1.0);
        }
        CHECK(found);
    }

    SynthConfig bad = cfg;
    bad.min_objects = 6;
    CHECK_THROWS_AS(synth_generate(1, bad, 1), Error);
    CHECK(synth_config_from_json(synth_config_to_json(cfg)).palette_size == cfg.palette_size);
}

TEST_CASE("sample directory round trip") {
    const auto dir = scratch("samples");
    const std::vector<SyntheticSample> a = synth_generate(6, SynthConfig{}, 11);
    save_samples(a, dir);
    CHECK(load_samples(dir) == a);
    try {
        load_samples(dir / "missing");
        FAIL("expected DataMissing");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DataMissing);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("training loop") {
    const std::vector<SyntheticSample> data = synth_generate(20, SynthConfig{}, 1);

    SUBCASE("zero learning rate leaves parameters unchanged") {
        RunConfig rc = quick_run(5);
        rc.optimizer.base_lr = 0.0;
        const SelectionModel init = [&] {
            SelectionModel m = SelectionModel::initialize(rc.model, rc.seed);
            m.quantize_to_float32();
            return m;
        }();
        const TrainResult r = train(data, rc);
        for (std::size_t i = 0; i < init.params().size(); ++i) CHECK(r.model.params().value(i) == init.params().value(i));
    }
    SUBCASE("logged total is the weighted sum") {
        const TrainResult r = train(data, quick_run());
        REQUIRE(r.log.size() == 12);
        for (const StepLog& s : r.log) {
            CHECK(s.total == doctest::Approx(1.0 * s.loss_iou + 50.0 * s.loss_iop).epsilon(1e-12));
            CHECK(s.lr == warmup_decay_lr(s.step, 2, 12, quick_run().optimizer.base_lr));
        }
        CHECK(r.log.front().step == 1);
    }
    SUBCASE("identical configs give identical checkpoints and logs") {
        const auto dir = scratch("train");
        const auto data_dir = dir / "data";
        save_samples(data, data_dir);
        RunConfig rc = quick_run();
        rc.train_data = data_dir.string();
        train_from_files(rc, dir / "a.ckpt", dir / "a.jsonl");
        train_from_files(rc, dir / "b.ckpt", dir / "b.jsonl");
        CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
        CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
        CHECK(json::parse(slurp(dir / "a.jsonl").substr(0, slurp(dir / "a.jsonl").find('\n'))).contains("l_iop"));
        rc.train_data = (dir / "nowhere").string();
        CHECK_THROWS_AS(train_from_files(rc, dir / "c.ckpt", dir / "c.jsonl"), Error);
        std::filesystem::remove_all(dir);
    }
    SUBCASE("config json round trip and validation") {
        RunConfig rc = quick_run();
        rc.train_data = "x";
        const RunConfig back = run_config_from_json(run_config_to_json(rc));
        CHECK(back.steps == rc.steps);
        CHECK(back.optimizer.base_lr == rc.optimizer.base_lr);
        CHECK(back.model == rc.model);
        CHECK(back.train_data == "x");
        CHECK_THROWS_AS(run_config_from_json(json{{"stepz", 3}}), Error);
        CHECK_THROWS_AS(run_config_from_json(json{{"steps", 0}}), Error);
    }
}

TEST_CASE("evaluation") {
    SynthConfig exact;
    exact.seg_noise = 0.0;
    exact.jitter = 0;
    exact.max_targets = 1;
    const std::vector<SyntheticSample> clean = synth_generate(25, exact, 2);
    const SelectionModel model = SelectionModel::initialize(ModelConfig::desk(), 1);
    CHECK(evaluate(model, clean, {.strategy = Strategy::GtTop1}).report.giou == 1.0);

    std::vector<SyntheticSample> bare = synth_generate(5, SynthConfig{}, 6);
    for (SyntheticSample& s : bare) s.proposals.proposals.clear();
    const EvalResult none = evaluate(model, bare, {});
    CHECK(none.report.giou == 0.0);
    for (const EvalSample& s : none.samples) CHECK(s.prediction.count() == 0);

    const std::vector<SyntheticSample> data = synth_generate(30, SynthConfig{}, 9);
    for (Strategy st : {Strategy::Top1Iou, Strategy::ThresholdIop, Strategy::Union, Strategy::Top5Threshold}) {
        const EvalResult single = evaluate(model, data, {.strategy = st, .norm_size = 40});
        const EvalResult multi = evaluate(model, data, {.strategy = st, .norm_size = 40, .threads = 3});
        CHECK(report_to_json(single.report) == report_to_json(multi.report));
        CHECK(parse_strategy(strategy_name(st)) == st);
    }
    try {
        parse_strategy("best-guess");
        FAIL("expected UnknownStrategy");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownStrategy);
    }

    const auto dir = scratch("eval");
    const EvalResult r = evaluate(model, data, {.strategy = Strategy::Union, .norm_size = 40});
    write_predictions(r.samples, dir / "pred.jsonl");
    const std::vector<EvalSample> back = read_predictions(dir / "pred.jsonl");
    CHECK(report_to_json(build_report(back, 40)) == report_to_json(r.report));
    std::uint64_t inter = 0, uni = 0;
    for (const EvalSample& s : back) {
        const oracle::Counts c = oracle::count(oracle::from_mask(s.prediction), oracle::from_mask(s.ground_truth));
        inter += c.inter;
        uni += c.uni;
    }
    CHECK(r.report.ciou == static_cast<double>(inter) / static_cast<double>(uni));
    std::filesystem::remove_all(dir);

    const SelectionModel wrong = SelectionModel::initialize(ModelConfig::desk(), 1);
    SynthConfig wide;
    wide.channels = 16;
    try {
        evaluate(wrong, synth_generate(2, wide, 1), {});
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
}

TEST_CASE("gradcheck runner") {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        const GradcheckReport r = gradcheck(seed);
        CHECK(r.pass);
        CHECK(r.worst <= kGradcheckTolerance);
        CHECK(r.config.heads == 2);
        CHECK(r.config.model_dim <= 16);
        CHECK(r.proposals <= 8);

        std::set<std::string> expected{"input.embeddings", "input.seg"};
        const SelectionModel shape(r.config);
        for (std::size_t i = 0; i < shape.params().size(); ++i) expected.insert(shape.params().name(i));
        std::multiset<std::string> listed;
        for (const BlockCheck& b : r.blocks) listed.insert(b.name);
        CHECK(listed.size() == expected.size());
        CHECK(std::set<std::string>(listed.begin(), listed.end()) == expected);
        CHECK(gradcheck_to_json(r).at("blocks").size() == r.blocks.size());
    }

    GradcheckOptions broken;
    broken.perturb_analytic = [](const std::string& block, std::vector<double>& g) {
        if (block == "fusion.1.attn.wk") {
            for (double& v : g) v *= 1.01;
        }
    };
    const GradcheckReport bad = gradcheck(5, broken);
    CHECK_FALSE(bad.pass);
    for (const BlockCheck& b : bad.blocks) CHECK(b.pass == (b.name != "fusion.1.attn.wk"));
}

TEST_CASE("overlay rendering") {
    const auto dir = scratch("render");
    const BinaryMask l = union_masks(std::vector<BinaryMask>{BinaryMask::rectangle(5, 6, 0, 0, 5, 2),
                                                             BinaryMask::rectangle(5, 6, 3, 0, 5, 6)});
    render_overlay(l, dir / "l.pgm");
    const std::string bytes = slurp(dir / "l.pgm");
    const std::string header = "P5\n6 5\n255\n";
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(static_cast<std::size_t>(std::count(bytes.begin() + header.size(), bytes.end(), '\xff')) == l.count());
    CHECK(decode_pgm(bytes) == l);

    render_overlay(BinaryMask(2, 2, true), dir / "ones.pgm");
    CHECK(slurp(dir / "ones.pgm") == "P5\n2 2\n255\n\xff\xff\xff\xff");
    CHECK_THROWS_AS(render_overlay(l, dir / "no" / "such" / "dir" / "x.pgm"), Error);
    std::filesystem::remove_all(dir);
}
