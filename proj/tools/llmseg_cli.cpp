// Command-line front end. Talks to the library exclusively through the C API.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "llmseg/llmseg.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;

bool is_validation_error(llmseg_status s) {
    switch (s) {
        case LLMSEG_INVALID_ARGUMENT:
        case LLMSEG_DIMENSION_MISMATCH:
        case LLMSEG_LENGTH_MISMATCH:
        case LLMSEG_INVALID_SIZE:
        case LLMSEG_EMPTY_INPUT:
        case LLMSEG_PARSE_ERROR:
        case LLMSEG_SCHEMA_VERSION_MISMATCH:
        case LLMSEG_SHAPE_MISMATCH:
        case LLMSEG_VERSION_MISMATCH:
        case LLMSEG_INVALID_TEMPERATURE:
        case LLMSEG_INVALID_HEAD_COUNT:
        case LLMSEG_INVALID_SCHEDULE:
        case LLMSEG_UNKNOWN_STRATEGY:
        case LLMSEG_INVALID_CONFIG:
        case LLMSEG_DATA_MISSING:
        case LLMSEG_CORPUS_TOO_SMALL:
        case LLMSEG_INVALID_TEMPLATE:
            return true;
        default:
            return false;
    }
}

struct Failure {
    int exit_code;
};

void check(llmseg_status s) {
    if (s == LLMSEG_OK) return;
    std::cerr << "error: " << llmseg_last_error() << "\n";
    throw Failure{is_validation_error(s) ? kExitValidation : kExitFailure};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot read " << path << "\n";
        throw Failure{kExitValidation};
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Owns a string returned through the C API.
struct OwnedString {
    char* text = nullptr;
    ~OwnedString() { llmseg_string_free(text); }
    std::string str() const { return text != nullptr ? text : ""; }
};

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"llmseg: mask-selection training, evaluation and dataset tooling"};
    app.require_subcommand(1);

    // train
    std::string train_config, train_out, train_log;
    auto* train = app.add_subcommand("train", "Train a selection model from a run config");
    train->add_option("--config", train_config, "RunConfig JSON file")->required();
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--log", train_log, "JSON-lines training log")->required();

    // eval
    std::string eval_ckpt, eval_data, eval_strategy = "threshold-iop", eval_report, eval_predictions;
    double eval_threshold = 0.5;
    std::size_t eval_norm = 512, eval_threads = 1;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a sample directory");
    eval->add_option("--ckpt", eval_ckpt)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--strategy", eval_strategy, "top1-iou|threshold-iop|union|top5-threshold|gt-top1");
    eval->add_option("--iop-threshold", eval_threshold);
    eval->add_option("--norm-size", eval_norm);
    eval->add_option("--threads", eval_threads);
    eval->add_option("--report", eval_report, "metrics report JSON");
    eval->add_option("--predictions", eval_predictions, "per-sample predictions (JSON lines)");

    // gradcheck
    std::uint64_t gc_seed = 0;
    std::string gc_report;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter block");
    gc->add_option("--seed", gc_seed)->required();
    gc->add_option("--report", gc_report, "write the JSON report here instead of stdout");

    // synth
    std::size_t synth_n = 0;
    std::uint64_t synth_seed = 0;
    std::string synth_out, synth_config;
    auto* synth = app.add_subcommand("synth", "Generate synthetic training/evaluation samples");
    synth->add_option("--n", synth_n)->required();
    synth->add_option("--seed", synth_seed)->required();
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--config", synth_config, "synthetic generator JSON overrides");

    // propose-postprocess
    std::string pp_in, pp_out;
    double pp_filter = 0.85, pp_nms = 0.7;
    std::size_t pp_max = 64;
    auto* pp = app.add_subcommand("propose-postprocess", "Filter, deduplicate and cap a proposal file");
    pp->add_option("--in", pp_in)->required();
    pp->add_option("--out", pp_out)->required();
    pp->add_option("--iou-filter", pp_filter);
    pp->add_option("--nms", pp_nms);
    pp->add_option("--max", pp_max, "proposal cap, 0 for none");

    // render
    std::string render_mask, render_out;
    auto* render = app.add_subcommand("render", "Write a mask as a binary PGM");
    render->add_option("--mask", render_mask)->required();
    render->add_option("--out", render_out)->required();

    // dataset
    auto* dataset = app.add_subcommand("dataset", "Instruction-dataset pipeline stages");
    dataset->require_subcommand(1);
    std::string ds_config, ds_corpus, ds_out, ds_selection, ds_provider = "mock:0", ds_template, ds_prompts,
                                                                ds_manifest;
    std::size_t ds_n = 0;
    std::uint64_t ds_seed = 0;
    bool ds_json = false;

    auto* ds_sample = dataset->add_subcommand("sample", "Stratified image selection");
    ds_sample->add_option("--config", ds_config)->required();
    ds_sample->add_option("--corpus", ds_corpus)->required();
    ds_sample->add_option("--out", ds_out)->required();

    auto* ds_prompts_cmd = dataset->add_subcommand("prompts", "Query the provider for descriptions and questions");
    ds_prompts_cmd->add_option("--config", ds_config)->required();
    ds_prompts_cmd->add_option("--corpus", ds_corpus)->required();
    ds_prompts_cmd->add_option("--selection", ds_selection, "output of `dataset sample`");
    ds_prompts_cmd->add_option("--provider", ds_provider, "mock:<seed> or http");
    ds_prompts_cmd->add_option("--template", ds_template);
    ds_prompts_cmd->add_option("--out", ds_out)->required();

    auto* ds_assemble = dataset->add_subcommand("assemble", "Parse responses and write the manifest");
    ds_assemble->add_option("--config", ds_config)->required();
    ds_assemble->add_option("--corpus", ds_corpus)->required();
    ds_assemble->add_option("--prompts", ds_prompts)->required();
    ds_assemble->add_option("--out", ds_out)->required();

    auto* ds_stats = dataset->add_subcommand("stats", "Summary statistics of a manifest");
    ds_stats->add_option("--config", ds_config, "accepted for symmetry; unused");
    ds_stats->add_option("--manifest", ds_manifest)->required();
    ds_stats->add_flag("--json", ds_json, "print JSON instead of text");

    auto* ds_run = dataset->add_subcommand("run", "sample, prompts and assemble in one go");
    ds_run->add_option("--config", ds_config)->required();
    ds_run->add_option("--corpus", ds_corpus)->required();
    ds_run->add_option("--provider", ds_provider, "mock:<seed> or http");
    ds_run->add_option("--template", ds_template);
    ds_run->add_option("--out", ds_out)->required();

    auto* ds_synth = dataset->add_subcommand("synth-corpus", "Write a synthetic source corpus");
    ds_synth->add_option("--n", ds_n)->required();
    ds_synth->add_option("--seed", ds_seed)->required();
    ds_synth->add_option("--out", ds_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*train) {
            OwnedString summary;
            check(llmseg_train(slurp(train_config).c_str(), train_out.c_str(), train_log.c_str(), &summary.text));
            std::cout << summary.str() << "\n";
        } else if (*eval) {
            OwnedString report;
            check(llmseg_evaluate(eval_ckpt.c_str(), eval_data.c_str(), eval_strategy.c_str(), eval_threshold,
                                  eval_norm, eval_threads, opt(eval_report), opt(eval_predictions), &report.text));
            std::cout << report.str() << "\n";
        } else if (*gc) {
            OwnedString report;
            int passed = 0;
            check(llmseg_gradcheck(gc_seed, &report.text, &passed));
            if (gc_report.empty()) {
                std::cout << report.str() << "\n";
            } else {
                std::ofstream(gc_report) << report.str() << "\n";
            }
            std::cerr << (passed ? "gradcheck passed" : "gradcheck FAILED") << "\n";
            return passed ? 0 : kExitFailure;
        } else if (*synth) {
            const std::string cfg = synth_config.empty() ? std::string() : slurp(synth_config);
            check(llmseg_synth(synth_n, synth_seed, opt(cfg), synth_out.c_str()));
        } else if (*pp) {
            llmseg_proposals* in = nullptr;
            llmseg_proposals* out = nullptr;
            check(llmseg_proposals_load(pp_in.c_str(), &in));
            const llmseg_status s = llmseg_proposals_postprocess(in, pp_filter, pp_nms, pp_max, &out);
            llmseg_proposals_free(in);
            check(s);
            const llmseg_status saved = llmseg_proposals_save(out, pp_out.c_str());
            std::size_t kept = 0;
            llmseg_proposals_count(out, &kept);
            llmseg_proposals_free(out);
            check(saved);
            std::cout << "kept " << kept << " proposals\n";
        } else if (*render) {
            llmseg_mask* mask = nullptr;
            check(llmseg_mask_load(render_mask.c_str(), &mask));
            const llmseg_status s = llmseg_mask_render_pgm(mask, render_out.c_str());
            llmseg_mask_free(mask);
            check(s);
        } else if (*ds_sample) {
            check(llmseg_dataset_sample(slurp(ds_config).c_str(), ds_corpus.c_str(), ds_out.c_str()));
        } else if (*ds_prompts_cmd) {
            check(llmseg_dataset_prompts(slurp(ds_config).c_str(), ds_corpus.c_str(), opt(ds_selection),
                                         ds_provider.c_str(), opt(ds_template), ds_out.c_str()));
        } else if (*ds_assemble) {
            OwnedString diagnostics;
            check(llmseg_dataset_assemble(slurp(ds_config).c_str(), ds_corpus.c_str(), ds_prompts.c_str(),
                                          ds_out.c_str(), &diagnostics.text));
            if (diagnostics.str() != "[]") std::cerr << "diagnostics: " << diagnostics.str() << "\n";
        } else if (*ds_stats) {
            OwnedString as_json, as_text;
            check(llmseg_dataset_stats(ds_manifest.c_str(), &as_json.text, &as_text.text));
            std::cout << (ds_json ? as_json.str() + "\n" : as_text.str());
        } else if (*ds_run) {
            check(llmseg_dataset_run(slurp(ds_config).c_str(), ds_corpus.c_str(), ds_provider.c_str(),
                                     opt(ds_template), ds_out.c_str()));
        } else if (*ds_synth) {
            check(llmseg_dataset_synth_corpus(ds_n, ds_seed, ds_out.c_str()));
        }
    } catch (const Failure& f) {
        return f.exit_code;
    }
    return 0;
}
