#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "llmseg/llmseg.h"

namespace {

std::string take(char* text) {
    std::string s = text == nullptr ? "" : text;
    llmseg_string_free(text);
    return s;
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("llmseg_capi_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("c api masks") {
    const std::vector<std::uint8_t> a{1, 1, 0, 0, 0, 0};
    const std::vector<std::uint8_t> b{1, 0, 0, 1, 0, 0};
    llmseg_mask* ma = nullptr;
    llmseg_mask* mb = nullptr;
    REQUIRE(llmseg_mask_create(2, 3, a.data(), &ma) == LLMSEG_OK);
    REQUIRE(llmseg_mask_create(2, 3, b.data(), &mb) == LLMSEG_OK);
    uint64_t area = 0;
    CHECK(llmseg_mask_area(ma, &area) == LLMSEG_OK);
    CHECK(area == 2);
    double v = 0.0;
    CHECK(llmseg_mask_iou(ma, mb, &v) == LLMSEG_OK);
    CHECK(v == doctest::Approx(1.0 / 3.0));
    CHECK(llmseg_mask_iop(mb, ma, &v) == LLMSEG_OK);
    CHECK(v == 0.5);

    char* text = nullptr;
    REQUIRE(llmseg_mask_to_json(ma, &text) == LLMSEG_OK);
    const std::string j = take(text);
    llmseg_mask* back = nullptr;
    REQUIRE(llmseg_mask_from_json(j.c_str(), &back) == LLMSEG_OK);
    std::vector<std::uint8_t> px(6);
    CHECK(llmseg_mask_pixels(back, px.data(), px.size()) == LLMSEG_OK);
    CHECK(px == a);
    CHECK(llmseg_mask_pixels(back, px.data(), 2) == LLMSEG_INVALID_SIZE);

    llmseg_mask* wide = nullptr;
    REQUIRE(llmseg_mask_create(3, 2, a.data(), &wide) == LLMSEG_OK);
    CHECK(llmseg_mask_iou(ma, wide, &v) == LLMSEG_DIMENSION_MISMATCH);
    CHECK(std::string(llmseg_last_error()).find("DimensionMismatch") != std::string::npos);
    CHECK(llmseg_mask_from_json("{\"h\": 2}", &back) == LLMSEG_PARSE_ERROR);
    CHECK(llmseg_mask_iou(nullptr, mb, &v) == LLMSEG_INVALID_ARGUMENT);
    CHECK(std::string(llmseg_status_name(LLMSEG_SHAPE_MISMATCH)) == "ShapeMismatch");

    llmseg_mask_free(ma);
    llmseg_mask_free(mb);
    llmseg_mask_free(back);
    llmseg_mask_free(wide);
    llmseg_mask_free(nullptr);
}

TEST_CASE("c api harness round trip") {
    const auto dir = scratch("harness");
    const std::string train_dir = (dir / "train").string(), eval_dir = (dir / "eval").string();
    REQUIRE(llmseg_synth(12, 1, nullptr, train_dir.c_str()) == LLMSEG_OK);
    REQUIRE(llmseg_synth(6, 2, "{\"jitter\": 1}", eval_dir.c_str()) == LLMSEG_OK);
    CHECK(llmseg_synth(3, 2, "{\"jiter\": 1}", eval_dir.c_str()) == LLMSEG_INVALID_CONFIG);

    const std::string cfg = "{\"steps\": 4, \"grad_accumulation\": 2, \"train_data\": \"" + train_dir +
                            "\", \"optimizer\": {\"warmup_steps\": 1}}";
    const std::string ckpt = (dir / "m.ckpt").string(), log = (dir / "log.jsonl").string();
    char* summary = nullptr;
    REQUIRE(llmseg_train(cfg.c_str(), ckpt.c_str(), log.c_str(), &summary) == LLMSEG_OK);
    CHECK(take(summary).find("\"steps\":4") != std::string::npos);

    llmseg_model* model = nullptr;
    REQUIRE(llmseg_model_load(ckpt.c_str(), &model) == LLMSEG_OK);
    char* mcfg = nullptr;
    REQUIRE(llmseg_model_config_json(model, &mcfg) == LLMSEG_OK);
    CHECK(take(mcfg).find("\"model_dim\":32") != std::string::npos);
    std::vector<double> emb(3 * 32, 0.1), seg(32, 0.2), sims(3), iops(3);
    CHECK(llmseg_model_forward(model, emb.data(), 3, seg.data(), 32, sims.data(), iops.data()) == LLMSEG_OK);
    CHECK(sims[0] == sims[2]);
    CHECK(iops[1] > 0.0);
    CHECK(llmseg_model_forward(model, emb.data(), 3, seg.data(), 16, sims.data(), iops.data()) ==
          LLMSEG_DIMENSION_MISMATCH);
    llmseg_model_free(model);

    const std::string preds = (dir / "p.jsonl").string();
    char* report = nullptr;
    REQUIRE(llmseg_evaluate(ckpt.c_str(), eval_dir.c_str(), "union", 0.5, 64, 2, nullptr, preds.c_str(), &report) ==
            LLMSEG_OK);
    const std::string r1 = take(report);
    CHECK(r1.find("\"strategy\":\"union\"") != std::string::npos);
    REQUIRE(llmseg_metrics_from_predictions(preds.c_str(), 64, &report) == LLMSEG_OK);
    const std::string r2 = take(report);
    CHECK(r2.substr(r2.find("\"ciou\""), 30) == r1.substr(r1.find("\"ciou\""), 30));
    CHECK(llmseg_evaluate(ckpt.c_str(), eval_dir.c_str(), "magic", 0.5, 64, 1, nullptr, nullptr, &report) ==
          LLMSEG_UNKNOWN_STRATEGY);
    CHECK(llmseg_model_load((dir / "absent.ckpt").string().c_str(), &model) == LLMSEG_IO_ERROR);

    int passed = 0;
    char* gc = nullptr;
    REQUIRE(llmseg_gradcheck(3, &gc, &passed) == LLMSEG_OK);
    CHECK(passed == 1);
    CHECK(take(gc).find("input.seg") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("c api dataset stages") {
    const auto dir = scratch("dataset");
    const std::string corpus = (dir / "corpus.jsonl").string();
    REQUIRE(llmseg_dataset_synth_corpus(40, 5, corpus.c_str()) == LLMSEG_OK);
    const char* cfg = "{\"counts\": {\"simple\": 4, \"complex\": 3, \"egocentric\": 2}, \"seed\": 2}";
    const std::string sel = (dir / "sel.json").string(), prompts = (dir / "prompts.jsonl").string();
    const std::string manifest = (dir / "manifest.jsonl").string(), oneshot = (dir / "oneshot.jsonl").string();
    REQUIRE(llmseg_dataset_sample(cfg, corpus.c_str(), sel.c_str()) == LLMSEG_OK);
    REQUIRE(llmseg_dataset_prompts(cfg, corpus.c_str(), sel.c_str(), "mock:1", nullptr, prompts.c_str()) == LLMSEG_OK);
    char* diag = nullptr;
    REQUIRE(llmseg_dataset_assemble(cfg, corpus.c_str(), prompts.c_str(), manifest.c_str(), &diag) == LLMSEG_OK);
    take(diag);
    REQUIRE(llmseg_dataset_run(cfg, corpus.c_str(), "mock:1", nullptr, oneshot.c_str()) == LLMSEG_OK);
    char* s1 = nullptr;
    char* s2 = nullptr;
    char* text = nullptr;
    REQUIRE(llmseg_dataset_stats(manifest.c_str(), &s1, &text) == LLMSEG_OK);
    REQUIRE(llmseg_dataset_stats(oneshot.c_str(), &s2, nullptr) == LLMSEG_OK);
    const std::string j1 = take(s1);
    CHECK(j1 == take(s2));
    CHECK(j1.find("\"images\":9") != std::string::npos);
    CHECK_FALSE(take(text).empty());
    CHECK(llmseg_dataset_prompts(cfg, corpus.c_str(), sel.c_str(), "oracle", nullptr, prompts.c_str()) ==
          LLMSEG_PROVIDER_UNAVAILABLE);
    CHECK(llmseg_dataset_sample("{\"counts\": {\"simple\": 400}}", corpus.c_str(), sel.c_str()) ==
          LLMSEG_CORPUS_TOO_SMALL);
    std::filesystem::remove_all(dir);
}
