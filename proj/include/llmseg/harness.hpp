#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmseg/metrics.hpp"
#include "llmseg/numerics.hpp"
#include "llmseg/proposals.hpp"
#include "llmseg/selection_model.hpp"

namespace llmseg {

// ------------------------------------------------------------- samples

struct SynthConfig {
    std::size_t canvas = 64;
    std::size_t grid = 16;
    std::size_t channels = 32;
    std::size_t min_objects = 2;
    std::size_t max_objects = 5;
    std::size_t min_targets = 1;
    std::size_t max_targets = 2;
    std::size_t min_object_side = 16;
    std::size_t max_object_side = 32;
    /// Hard bound on the per-edge proposal offset in pixels. Offsets are
    /// round(N(0, jitter/4)) clamped to ±jitter.
    std::size_t jitter = 2;
    std::size_t distractors = 2;
    double seg_noise = 0.05;
    double background_noise = 0.05;
    /// Object feature vectors come from a fixed palette of categories shared
    /// by every corpus built with the same palette_seed. Zero draws a fresh
    /// vector per object.
    std::size_t palette_size = 8;
    std::uint64_t palette_seed = 7;
    double instance_noise = 0.0;

    void validate() const;
};

json synth_config_to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const json& value, const SynthConfig& base = SynthConfig{});

/// Everything one training/evaluation example needs: the encoder features,
/// the proposal set, the ground truth, the SEG vector and the labelled targets.
struct SyntheticSample {
    std::string image_id;
    FeatureGrid features;
    ProposalSet proposals;
    BinaryMask gt;
    std::vector<double> seg;
    TargetVector targets;

    friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

/// Deterministic given the seed. Rectangular objects are placed without
/// overlap; each contributes a random unit feature vector painted over its
/// grid footprint by coverage. Proposals are the jittered objects plus
/// distractor rectangles, in shuffled order. The SEG vector is the mean of
/// the target objects' vectors plus Gaussian noise.
std::vector<SyntheticSample> synth_generate(std::size_t n, const SynthConfig& config, std::uint64_t seed);

/// Directory layout: index.json plus <id>.fgrd, <id>.proposals.json,
/// <id>.gt.json and <id>.segv per sample.
void save_samples(std::span<const SyntheticSample> samples, const std::filesystem::path& dir);
/// Targets are recomputed with label_targets. Throws DataMissing when the
/// directory or its index is absent.
std::vector<SyntheticSample> load_samples(const std::filesystem::path& dir);

/// Mask-pooled embeddings (K×channels) for every proposal of the sample.
Tensor2 proposal_embeddings(const SyntheticSample& sample);

// ------------------------------------------------------------ training

struct RunConfig {
    ModelConfig model = ModelConfig::desk();
    AdamWConfig optimizer{.base_lr = 2e-3, .weight_decay = 0.1, .warmup_steps = 100, .total_steps = 2000};
    std::size_t steps = 2000;
    std::size_t grad_accumulation = 10;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    std::string train_data;
    std::string eval_data;
    std::string checkpoint;
    std::string report;

    void validate() const;
};

json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const json& value);

struct StepLog {
    std::uint64_t step = 0;
    double lr = 0.0;
    double loss_iou = 0.0;
    double loss_iop = 0.0;
    double total = 0.0;
};

json step_log_to_json(const StepLog& entry);

struct TrainResult {
    SelectionModel model;
    std::vector<StepLog> log;
};

/// forward → loss → backward, accumulated over grad_accumulation×batch_size
/// samples, then one AdamW step on the warmup-decay schedule. The returned
/// model is rounded to float32 so it matches its checkpoint exactly.
TrainResult train(std::span<const SyntheticSample> samples, const RunConfig& config,
                  const std::function<void(const StepLog&)>& on_step = {});

/// File-driven training: reads config.train_data, writes the checkpoint and
/// a JSON-lines log.
TrainResult train_from_files(const RunConfig& config, const std::filesystem::path& checkpoint_path,
                             const std::filesystem::path& log_path);

// ---------------------------------------------------------- evaluation

enum class Strategy { Top1Iou, ThresholdIop, Union, Top5Threshold, GtTop1 };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy strategy);

struct EvalOptions {
    Strategy strategy = Strategy::ThresholdIop;
    double iop_threshold = 0.5;
    std::size_t norm_size = kDefaultNormSize;
    std::size_t threads = 1;
};

struct EvalResult {
    MetricsReport report;
    std::vector<EvalSample> samples;  // input order
    std::vector<IndexSet> selections;
};

/// Samples without proposals produce empty predictions.
EvalResult evaluate(const SelectionModel& model, std::span<const SyntheticSample> samples, const EvalOptions& options);

/// JSON lines {"image_id", "prediction": <Mask JSON>, "gt": <Mask JSON>}.
void write_predictions(std::span<const EvalSample> samples, const std::filesystem::path& path);
std::vector<EvalSample> read_predictions(const std::filesystem::path& path);

// ----------------------------------------------------------- gradcheck

inline constexpr double kGradcheckTolerance = 1e-4;

struct BlockCheck {
    std::string name;
    std::size_t elements = 0;
    double max_relative_error = 0.0;
    bool pass = false;
};

struct GradcheckReport {
    std::uint64_t seed = 0;
    ModelConfig config;
    std::size_t proposals = 0;
    std::vector<BlockCheck> blocks;
    double worst = 0.0;
    bool pass = false;
};

struct GradcheckOptions {
    double step = 1e-4;
    double tolerance = kGradcheckTolerance;
    /// Test hook applied to each analytic gradient block before comparison.
    std::function<void(const std::string& block, std::vector<double>& analytic)> perturb_analytic;
};

/// Random small model (K ≤ 8, dim ≤ 16, 2 heads) and sample; compares the
/// analytic gradient of every parameter block and both inputs with central
/// differences.
GradcheckReport gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});
json gradcheck_to_json(const GradcheckReport& report);

// ----------------------------------------------------------- rendering

void render_overlay(const BinaryMask& mask, const std::filesystem::path& path);

}  // namespace llmseg
