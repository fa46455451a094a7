#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "llmseg/io.hpp"
#include "llmseg/numerics.hpp"
#include "llmseg/proposals.hpp"

namespace llmseg {

enum class KlDirection {
    PredictionFirst,  // KL(softmax(sim/τ) ‖ softmax(I/τ))
    TargetFirst,
};

struct ModelConfig {
    std::size_t model_dim = 256;
    std::size_t fusion_blocks = 2;
    std::size_t heads = 8;
    std::size_t fusion_hidden_dim = 512;
    /// Output widths of the IoU-head MLP layers; the last must equal model_dim.
    std::vector<std::size_t> iou_head_dims{256, 256, 256};
    /// Output widths of the IoP-head MLP layers; the last must be 1.
    std::vector<std::size_t> iop_head_dims{256, 64, 1};
    double tau = 0.1;
    double lambda_iou = 1.0;
    double lambda_iop = 50.0;
    double iop_threshold = 0.5;
    KlDirection kl_direction = KlDirection::PredictionFirst;

    /// Desk-scale preset used by the training harness: model_dim 32 with
    /// proportionally shrunk MLP widths.
    static ModelConfig desk();

    /// Throws InvalidConfig.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

json model_config_to_json(const ModelConfig& config);
/// Missing keys keep the defaults of `base`; unknown keys are rejected.
ModelConfig model_config_from_json(const json& value, const ModelConfig& base = ModelConfig{});

struct FusionResult {
    Tensor2 embeddings;        // K×d
    std::vector<double> seg;   // d
};

struct SelectionOutput {
    std::vector<double> similarities;
    std::vector<double> iop_predictions;

    std::size_t size() const noexcept { return similarities.size(); }
};

struct LossBreakdown {
    double iou = 0.0;
    double iop = 0.0;
    double total = 0.0;
};

/// Gradients of the loss w.r.t. the model inputs.
struct InputGrads {
    Tensor2 embeddings;
    std::vector<double> seg;
};

struct ScalarWithGrad {
    double value = 0.0;
    std::vector<double> grad;
};

/// KL divergence between the temperature softmaxes of the similarities and
/// the ground-truth IoUs. The gradient is w.r.t. the similarities only.
ScalarWithGrad loss_iou(std::span<const double> similarities, std::span<const double> target_ious, double tau,
                        KlDirection direction = KlDirection::PredictionFirst);

/// mean_k e^{g_k − 1}·(p_k − g_k)². Gradient w.r.t. the predictions.
ScalarWithGrad loss_iop(std::span<const double> predictions, std::span<const double> targets);

double total_loss(double l_iou, double l_iop, const ModelConfig& config);

/// Fusion transformer over [SEG; mask embeddings] plus the IoU and IoP heads.
/// A learned vector ("fusion.seg_type") is added to the SEG token before the
/// first block so attention can tell it apart from the proposals.
class SelectionModel {
public:
    /// All parameters zero-initialised (layer-norm gains one).
    explicit SelectionModel(ModelConfig config);
    /// Fan-in scaled symmetric-uniform weights, zero biases. Values are
    /// rounded to float32 so checkpoints reproduce the model exactly.
    static SelectionModel initialize(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    /// Throws EmptyProposalSet when there are no embeddings.
    FusionResult fusion_forward(const Tensor2& embeddings, std::span<const double> seg) const;
    std::vector<double> iou_head(const Tensor2& updated_embeddings, std::span<const double> updated_seg) const;
    std::vector<double> iop_head(const Tensor2& updated_embeddings) const;

    /// Full forward pass; an empty embedding set yields an empty output.
    SelectionOutput forward(const Tensor2& embeddings, std::span<const double> seg) const;

    LossBreakdown loss(const Tensor2& embeddings, std::span<const double> seg, const TargetVector& targets) const;
    /// Computes the loss and adds scale·∂loss/∂θ into the parameter
    /// gradient slots. Optionally reports input gradients (unscaled).
    LossBreakdown accumulate_gradients(const Tensor2& embeddings, std::span<const double> seg,
                                       const TargetVector& targets, double scale = 1.0,
                                       InputGrads* input_grads = nullptr);

    /// Rounds every parameter to the nearest float32.
    void quantize_to_float32();

private:
    struct AttentionIndex {
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct BlockIndex {
        std::size_t ln1_gain, ln1_bias;
        AttentionIndex attn;
        std::size_t ln2_gain, ln2_bias, fc1_weight, fc1_bias, fc2_weight, fc2_bias;
    };
    struct LayerIndex {
        std::size_t weight, bias;
    };

    struct BlockCache;
    struct MlpCache;
    struct Trace;

    AttentionWeights attention_weights(const AttentionIndex& a) const;
    Tensor2 mlp_forward(const std::vector<LayerIndex>& layers, const Tensor2& x, MlpCache* cache) const;
    Tensor2 mlp_backward(const std::vector<LayerIndex>& layers, const MlpCache& cache, const Tensor2& dy,
                         double scale);
    Tensor2 blocks_forward(Tensor2 tokens, std::vector<BlockCache>* caches) const;
    Trace trace(const Tensor2& embeddings, std::span<const double> seg, bool keep_cache) const;

    ModelConfig config_;
    ParamStore params_;
    std::size_t seg_type_ = 0;
    std::vector<BlockIndex> blocks_;
    std::vector<LayerIndex> iou_layers_;
    std::vector<LayerIndex> iop_layers_;
};

// ------------------------------------------------------------ selection

using IndexSet = std::vector<std::size_t>;

/// Argmax of similarities, lowest index on ties; empty for K == 0.
IndexSet select_top1_iou(const SelectionOutput& output);
/// {k : iop_predictions[k] > threshold}, ascending.
IndexSet select_threshold_iop(const SelectionOutput& output, double threshold);
IndexSet select_union_top1_threshold(const SelectionOutput& output, double threshold);
/// Threshold rule restricted to the five highest similarities.
IndexSet select_threshold_from_top5(const SelectionOutput& output, double threshold);

/// Union of the selected proposals; all-zeros when nothing is selected.
BinaryMask predict_mask(const ProposalSet& set, const IndexSet& selected);

// ---------------------------------------------------------- persistence

std::string encode_checkpoint(const SelectionModel& model);
SelectionModel decode_checkpoint(std::string_view bytes);
void save_checkpoint(const SelectionModel& model, const std::filesystem::path& path);
SelectionModel load_checkpoint(const std::filesystem::path& path);

/// SEGV: magic, u32 dim, float32 values.
std::string encode_seg_vector(std::span<const double> seg);
std::vector<double> decode_seg_vector(std::string_view bytes);
void save_seg_vector(std::span<const double> seg, const std::filesystem::path& path);
std::vector<double> load_seg_vector(const std::filesystem::path& path);

}  // namespace llmseg
