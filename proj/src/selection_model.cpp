#include "llmseg/selection_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "llmseg/error.hpp"
#include "llmseg/rng.hpp"

namespace llmseg {

namespace {

constexpr std::string_view kCheckpointMagic = "MSEL";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::string_view kSegMagic = "SEGV";

void invalid(const std::string& message) { fail(ErrorCode::InvalidConfig, message); }

std::string_view kl_direction_name(KlDirection d) {
    return d == KlDirection::PredictionFirst ? "prediction_first" : "target_first";
}

std::vector<double> rows_dot(const Tensor2& rows, std::span<const double> vec) {
    std::vector<double> out(rows.rows(), 0.0);
    for (std::size_t k = 0; k < rows.rows(); ++k) {
        const auto r = rows.row(k);
        for (std::size_t j = 0; j < r.size(); ++j) out[k] += r[j] * vec[j];
    }
    return out;
}

std::vector<double> log_softmax_temp(std::span<const double> logits, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::InvalidTemperature, "temperature must be positive");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double v : logits) total += std::exp((v - peak) / tau);
    const double log_norm = std::log(total);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - peak) / tau - log_norm;
    return out;
}

}  // namespace

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.model_dim = 32;
    c.fusion_blocks = 2;
    c.heads = 1;
    c.fusion_hidden_dim = 64;
    c.iou_head_dims = {32, 32, 32};
    c.iop_head_dims = {32, 8, 1};
    return c;
}

void ModelConfig::validate() const {
    if (model_dim == 0) invalid("model_dim must be positive");
    if (heads == 0 || model_dim % heads != 0) {
        invalid("model_dim " + std::to_string(model_dim) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (fusion_hidden_dim == 0) invalid("fusion_hidden_dim must be positive");
    if (iou_head_dims.empty() || iou_head_dims.back() != model_dim) {
        invalid("iou_head_dims must end with model_dim so the dot product with the SEG token is defined");
    }
    if (iop_head_dims.empty() || iop_head_dims.back() != 1) invalid("iop_head_dims must end with 1");
    for (std::size_t d : iou_head_dims) {
        if (d == 0) invalid("iou_head_dims entries must be positive");
    }
    for (std::size_t d : iop_head_dims) {
        if (d == 0) invalid("iop_head_dims entries must be positive");
    }
    if (!(tau > 0.0) || !std::isfinite(tau)) invalid("tau must be positive");
    if (!(lambda_iou >= 0.0) || !(lambda_iop >= 0.0)) invalid("loss weights must be nonnegative");
    if (!(iop_threshold >= 0.0 && iop_threshold <= 1.0)) invalid("iop_threshold must lie in [0, 1]");
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"model_dim", c.model_dim},
                {"fusion_blocks", c.fusion_blocks},
                {"heads", c.heads},
                {"fusion_hidden_dim", c.fusion_hidden_dim},
                {"iou_head_dims", c.iou_head_dims},
                {"iop_head_dims", c.iop_head_dims},
                {"tau", c.tau},
                {"lambda_iou", c.lambda_iou},
                {"lambda_iop", c.lambda_iop},
                {"iop_threshold", c.iop_threshold},
                {"kl_direction", kl_direction_name(c.kl_direction)}};
}

ModelConfig model_config_from_json(const json& value, const ModelConfig& base) {
    if (!value.is_object()) invalid("model config must be a JSON object");
    ModelConfig c = base;
    try {
        for (const auto& [key, v] : value.items()) {
            if (key == "model_dim") c.model_dim = v.get<std::size_t>();
            else if (key == "fusion_blocks") c.fusion_blocks = v.get<std::size_t>();
            else if (key == "heads") c.heads = v.get<std::size_t>();
            else if (key == "fusion_hidden_dim") c.fusion_hidden_dim = v.get<std::size_t>();
            else if (key == "iou_head_dims") c.iou_head_dims = v.get<std::vector<std::size_t>>();
            else if (key == "iop_head_dims") c.iop_head_dims = v.get<std::vector<std::size_t>>();
            else if (key == "tau") c.tau = v.get<double>();
            else if (key == "lambda_iou") c.lambda_iou = v.get<double>();
            else if (key == "lambda_iop") c.lambda_iop = v.get<double>();
            else if (key == "iop_threshold") c.iop_threshold = v.get<double>();
            else if (key == "kl_direction") {
                const std::string d = v.get<std::string>();
                if (d == "prediction_first") c.kl_direction = KlDirection::PredictionFirst;
                else if (d == "target_first") c.kl_direction = KlDirection::TargetFirst;
                else invalid("kl_direction must be prediction_first or target_first");
            } else {
                invalid("unknown model config key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        invalid(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- losses

ScalarWithGrad loss_iou(std::span<const double> similarities, std::span<const double> target_ious, double tau,
                        KlDirection direction) {
    if (similarities.size() != target_ious.size()) {
        fail(ErrorCode::LengthMismatch, std::to_string(similarities.size()) + " similarities vs " +
                                            std::to_string(target_ious.size()) + " targets");
    }
    if (similarities.empty()) fail(ErrorCode::LengthMismatch, "IoU loss over zero proposals");
    const std::vector<double> log_p = log_softmax_temp(similarities, tau);
    const std::vector<double> log_q = log_softmax_temp(target_ious, tau);
    ScalarWithGrad out;
    out.grad.resize(log_p.size());
    if (direction == KlDirection::PredictionFirst) {
        for (std::size_t i = 0; i < log_p.size(); ++i) out.value += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
        for (std::size_t i = 0; i < log_p.size(); ++i) {
            out.grad[i] = std::exp(log_p[i]) * (log_p[i] - log_q[i] - out.value) / tau;
        }
    } else {
        for (std::size_t i = 0; i < log_p.size(); ++i) {
            const double q = std::exp(log_q[i]);
            out.value += q * (log_q[i] - log_p[i]);
            out.grad[i] = (std::exp(log_p[i]) - q) / tau;
        }
    }
    out.value = std::max(out.value, 0.0);
    return out;
}

ScalarWithGrad loss_iop(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size()) {
        fail(ErrorCode::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                            std::to_string(targets.size()) + " targets");
    }
    if (predictions.empty()) fail(ErrorCode::LengthMismatch, "IoP loss over zero proposals");
    const double k = static_cast<double>(predictions.size());
    ScalarWithGrad out;
    out.grad.resize(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double weight = std::exp(targets[i] - 1.0);
        const double diff = predictions[i] - targets[i];
        out.value += weight * diff * diff;
        out.grad[i] = 2.0 * weight * diff / k;
    }
    out.value /= k;
    return out;
}

double total_loss(double l_iou, double l_iop, const ModelConfig& config) {
    return config.lambda_iou * l_iou + config.lambda_iop * l_iop;
}

// ----------------------------------------------------------------- model

struct SelectionModel::BlockCache {
    Tensor2 tokens_in;
    LayerNormCache ln1;
    Tensor2 normed1;
    AttentionCache attn;
    LayerNormCache ln2;
    Tensor2 normed2;
    Tensor2 hidden_pre;
    Tensor2 hidden_act;
};

struct SelectionModel::MlpCache {
    std::vector<Tensor2> inputs;
    std::vector<Tensor2> pre_activations;
};

struct SelectionModel::Trace {
    std::vector<BlockCache> blocks;
    Tensor2 embeddings;  // updated, K×d
    std::vector<double> seg;
    MlpCache iou_cache;
    Tensor2 projected;  // K×d
    MlpCache iop_cache;
    SelectionOutput output;
};

SelectionModel::SelectionModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.model_dim;
    const auto vec = [](std::size_t n, double v = 0.0) { return Tensor2(1, n, v); };
    seg_type_ = params_.add("fusion.seg_type", vec(d));
    for (std::size_t b = 0; b < config_.fusion_blocks; ++b) {
        const std::string p = "fusion." + std::to_string(b) + ".";
        BlockIndex idx{};
        idx.ln1_gain = params_.add(p + "ln1.gain", vec(d, 1.0));
        idx.ln1_bias = params_.add(p + "ln1.bias", vec(d));
        idx.attn.wq = params_.add(p + "attn.wq", Tensor2(d, d));
        idx.attn.bq = params_.add(p + "attn.bq", vec(d));
        idx.attn.wk = params_.add(p + "attn.wk", Tensor2(d, d));
        idx.attn.bk = params_.add(p + "attn.bk", vec(d));
        idx.attn.wv = params_.add(p + "attn.wv", Tensor2(d, d));
        idx.attn.bv = params_.add(p + "attn.bv", vec(d));
        idx.attn.wo = params_.add(p + "attn.wo", Tensor2(d, d));
        idx.attn.bo = params_.add(p + "attn.bo", vec(d));
        idx.ln2_gain = params_.add(p + "ln2.gain", vec(d, 1.0));
        idx.ln2_bias = params_.add(p + "ln2.bias", vec(d));
        idx.fc1_weight = params_.add(p + "mlp.fc1.weight", Tensor2(d, config_.fusion_hidden_dim));
        idx.fc1_bias = params_.add(p + "mlp.fc1.bias", vec(config_.fusion_hidden_dim));
        idx.fc2_weight = params_.add(p + "mlp.fc2.weight", Tensor2(config_.fusion_hidden_dim, d));
        idx.fc2_bias = params_.add(p + "mlp.fc2.bias", vec(d));
        blocks_.push_back(idx);
    }
    const auto add_mlp = [&](const std::string& prefix, const std::vector<std::size_t>& dims,
                             std::vector<LayerIndex>& layers) {
        std::size_t in = d;
        for (std::size_t l = 0; l < dims.size(); ++l) {
            const std::string p = prefix + std::to_string(l) + ".";
            layers.push_back({params_.add(p + "weight", Tensor2(in, dims[l])), params_.add(p + "bias", vec(dims[l]))});
            in = dims[l];
        }
    };
    add_mlp("iou_head.", config_.iou_head_dims, iou_layers_);
    add_mlp("iop_head.", config_.iop_head_dims, iop_layers_);
}

SelectionModel SelectionModel::initialize(ModelConfig config, std::uint64_t seed) {
    SelectionModel model(std::move(config));
    Rng rng(seed);
    ParamStore& ps = model.params_;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string& name = ps.name(i);
        Tensor2& t = ps.value(i);
        if (name == "fusion.seg_type") {
            // Unit expected norm; a zero start leaves proposals unable to tell
            // the SEG token apart from each other for a long stretch of training.
            const double b = std::sqrt(3.0 / static_cast<double>(t.cols()));
            for (double& v : t.values()) v = static_cast<float>(rng.uniform(-b, b));
            continue;
        }
        const bool is_matrix = name.ends_with(".weight") || name.find(".attn.w") != std::string::npos;
        if (!is_matrix) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows()));
        for (double& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    return model;
}

void SelectionModel::quantize_to_float32() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        for (double& v : params_.value(i).values()) v = static_cast<double>(static_cast<float>(v));
    }
}

AttentionWeights SelectionModel::attention_weights(const AttentionIndex& a) const {
    return AttentionWeights{params_.value(a.wq), params_.value(a.bq), params_.value(a.wk), params_.value(a.bk),
                            params_.value(a.wv), params_.value(a.bv), params_.value(a.wo), params_.value(a.bo),
                            config_.heads};
}

Tensor2 SelectionModel::mlp_forward(const std::vector<LayerIndex>& layers, const Tensor2& x, MlpCache* cache) const {
    Tensor2 h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Tensor2 z = linear_forward(h, params_.value(layers[l].weight), params_.value(layers[l].bias));
        if (cache != nullptr) cache->inputs.push_back(h);
        if (l + 1 == layers.size()) return z;
        h = gelu_forward(z);
        if (cache != nullptr) cache->pre_activations.push_back(std::move(z));
    }
    return h;
}

Tensor2 SelectionModel::mlp_backward(const std::vector<LayerIndex>& layers, const MlpCache& cache, const Tensor2& dy,
                                     double scale) {
    Tensor2 grad = dy;
    for (std::size_t l = layers.size(); l-- > 0;) {
        LinearGrads g = linear_backward(cache.inputs[l], params_.value(layers[l].weight), grad);
        for (double& v : g.dweight.values()) v *= scale;
        for (double& v : g.dbias.values()) v *= scale;
        params_.accumulate(layers[l].weight, g.dweight);
        params_.accumulate(layers[l].bias, g.dbias);
        grad = l > 0 ? gelu_backward(cache.pre_activations[l - 1], g.dx) : std::move(g.dx);
    }
    return grad;
}

Tensor2 SelectionModel::blocks_forward(Tensor2 tokens, std::vector<BlockCache>* caches) const {
    for (const BlockIndex& b : blocks_) {
        BlockCache c;
        if (caches != nullptr) c.tokens_in = tokens;
        Tensor2 normed1 = layer_norm_forward(tokens, params_.value(b.ln1_gain), params_.value(b.ln1_bias), &c.ln1);
        tokens += attention_forward(normed1, normed1, normed1, attention_weights(b.attn),
                                    caches != nullptr ? &c.attn : nullptr);
        Tensor2 normed2 = layer_norm_forward(tokens, params_.value(b.ln2_gain), params_.value(b.ln2_bias), &c.ln2);
        Tensor2 hidden_pre = linear_forward(normed2, params_.value(b.fc1_weight), params_.value(b.fc1_bias));
        Tensor2 hidden_act = gelu_forward(hidden_pre);
        tokens += linear_forward(hidden_act, params_.value(b.fc2_weight), params_.value(b.fc2_bias));
        if (caches != nullptr) {
            c.normed1 = std::move(normed1);
            c.normed2 = std::move(normed2);
            c.hidden_pre = std::move(hidden_pre);
            c.hidden_act = std::move(hidden_act);
            caches->push_back(std::move(c));
        }
    }
    return tokens;
}

SelectionModel::Trace SelectionModel::trace(const Tensor2& embeddings, std::span<const double> seg,
                                            bool keep_cache) const {
    const std::size_t d = config_.model_dim;
    if (embeddings.rows() == 0) fail(ErrorCode::EmptyProposalSet, "fusion over zero mask embeddings");
    if (embeddings.cols() != d || seg.size() != d) {
        fail(ErrorCode::DimensionMismatch, "embeddings/SEG token must have model_dim " + std::to_string(d));
    }
    for (double v : seg) {
        if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "SEG token is not finite");
    }
    const std::size_t k = embeddings.rows();
    Tensor2 tokens(k + 1, d);
    const auto seg_type = params_.value(seg_type_).values();
    for (std::size_t j = 0; j < d; ++j) tokens(0, j) = seg[j] + seg_type[j];
    for (std::size_t r = 0; r < k; ++r) std::copy(embeddings.row(r).begin(), embeddings.row(r).end(), tokens.row(r + 1).begin());

    Trace t;
    const Tensor2 fused = blocks_forward(std::move(tokens), keep_cache ? &t.blocks : nullptr);
    t.seg.assign(fused.row(0).begin(), fused.row(0).end());
    t.embeddings = Tensor2(k, d);
    for (std::size_t r = 0; r < k; ++r) std::copy(fused.row(r + 1).begin(), fused.row(r + 1).end(), t.embeddings.row(r).begin());

    t.projected = mlp_forward(iou_layers_, t.embeddings, keep_cache ? &t.iou_cache : nullptr);
    t.output.similarities = rows_dot(t.projected, t.seg);
    const Tensor2 logits = mlp_forward(iop_layers_, t.embeddings, keep_cache ? &t.iop_cache : nullptr);
    t.output.iop_predictions.resize(k);
    for (std::size_t r = 0; r < k; ++r) t.output.iop_predictions[r] = sigmoid(logits(r, 0));
    return t;
}

FusionResult SelectionModel::fusion_forward(const Tensor2& embeddings, std::span<const double> seg) const {
    Trace t = trace(embeddings, seg, false);
    return {std::move(t.embeddings), std::move(t.seg)};
}

std::vector<double> SelectionModel::iou_head(const Tensor2& updated_embeddings, std::span<const double> updated_seg) const {
    if (updated_seg.size() != config_.model_dim) fail(ErrorCode::DimensionMismatch, "SEG token dimension");
    return rows_dot(mlp_forward(iou_layers_, updated_embeddings, nullptr), updated_seg);
}

std::vector<double> SelectionModel::iop_head(const Tensor2& updated_embeddings) const {
    const Tensor2 logits = mlp_forward(iop_layers_, updated_embeddings, nullptr);
    std::vector<double> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) out[r] = sigmoid(logits(r, 0));
    return out;
}

SelectionOutput SelectionModel::forward(const Tensor2& embeddings, std::span<const double> seg) const {
    if (embeddings.rows() == 0) return {};
    return trace(embeddings, seg, false).output;
}

LossBreakdown SelectionModel::loss(const Tensor2& embeddings, std::span<const double> seg,
                                   const TargetVector& targets) const {
    const SelectionOutput out = forward(embeddings, seg);
    LossBreakdown l;
    l.iou = loss_iou(out.similarities, targets.ious, config_.tau, config_.kl_direction).value;
    l.iop = loss_iop(out.iop_predictions, targets.iops).value;
    l.total = total_loss(l.iou, l.iop, config_);
    return l;
}

LossBreakdown SelectionModel::accumulate_gradients(const Tensor2& embeddings, std::span<const double> seg,
                                                   const TargetVector& targets, double scale,
                                                   InputGrads* input_grads) {
    const Trace t = trace(embeddings, seg, true);
    const std::size_t k = embeddings.rows();
    const std::size_t d = config_.model_dim;

    const ScalarWithGrad liou = loss_iou(t.output.similarities, targets.ious, config_.tau, config_.kl_direction);
    const ScalarWithGrad liop = loss_iop(t.output.iop_predictions, targets.iops);
    LossBreakdown l{liou.value, liop.value, total_loss(liou.value, liop.value, config_)};

    // Similarities: sim_k = projected_k · seg'.
    Tensor2 dprojected(k, d);
    std::vector<double> dseg(d, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
        const double dsim = config_.lambda_iou * liou.grad[r];
        for (std::size_t j = 0; j < d; ++j) {
            dprojected(r, j) = dsim * t.seg[j];
            dseg[j] += dsim * t.projected(r, j);
        }
    }
    Tensor2 dlogits(k, 1);
    for (std::size_t r = 0; r < k; ++r) {
        const double p = t.output.iop_predictions[r];
        dlogits(r, 0) = config_.lambda_iop * liop.grad[r] * p * (1.0 - p);
    }
    Tensor2 dembeddings = mlp_backward(iou_layers_, t.iou_cache, dprojected, scale);
    dembeddings += mlp_backward(iop_layers_, t.iop_cache, dlogits, scale);

    Tensor2 dtokens(k + 1, d);
    std::copy(dseg.begin(), dseg.end(), dtokens.row(0).begin());
    for (std::size_t r = 0; r < k; ++r) std::copy(dembeddings.row(r).begin(), dembeddings.row(r).end(), dtokens.row(r + 1).begin());

    const auto scaled = [scale](Tensor2 g) {
        for (double& v : g.values()) v *= scale;
        return g;
    };
    for (std::size_t bi = blocks_.size(); bi-- > 0;) {
        const BlockIndex& b = blocks_[bi];
        const BlockCache& c = t.blocks[bi];
        // MLP residual branch.
        LinearGrads fc2 = linear_backward(c.hidden_act, params_.value(b.fc2_weight), dtokens);
        params_.accumulate(b.fc2_weight, scaled(std::move(fc2.dweight)));
        params_.accumulate(b.fc2_bias, scaled(std::move(fc2.dbias)));
        const Tensor2 dhidden = gelu_backward(c.hidden_pre, fc2.dx);
        LinearGrads fc1 = linear_backward(c.normed2, params_.value(b.fc1_weight), dhidden);
        params_.accumulate(b.fc1_weight, scaled(std::move(fc1.dweight)));
        params_.accumulate(b.fc1_bias, scaled(std::move(fc1.dbias)));
        LayerNormGrads ln2 = layer_norm_backward(c.ln2, params_.value(b.ln2_gain), fc1.dx);
        params_.accumulate(b.ln2_gain, scaled(std::move(ln2.dgain)));
        params_.accumulate(b.ln2_bias, scaled(std::move(ln2.dbias)));
        dtokens += ln2.dx;
        // Attention residual branch.
        AttentionGrads ag = attention_backward(c.attn, attention_weights(b.attn), dtokens);
        params_.accumulate(b.attn.wq, scaled(std::move(ag.dwq)));
        params_.accumulate(b.attn.bq, scaled(std::move(ag.dbq)));
        params_.accumulate(b.attn.wk, scaled(std::move(ag.dwk)));
        params_.accumulate(b.attn.bk, scaled(std::move(ag.dbk)));
        params_.accumulate(b.attn.wv, scaled(std::move(ag.dwv)));
        params_.accumulate(b.attn.bv, scaled(std::move(ag.dbv)));
        params_.accumulate(b.attn.wo, scaled(std::move(ag.dwo)));
        params_.accumulate(b.attn.bo, scaled(std::move(ag.dbo)));
        Tensor2 dnormed1 = std::move(ag.dqueries);
        dnormed1 += ag.dkeys;
        dnormed1 += ag.dvalues;
        LayerNormGrads ln1 = layer_norm_backward(c.ln1, params_.value(b.ln1_gain), dnormed1);
        params_.accumulate(b.ln1_gain, scaled(std::move(ln1.dgain)));
        params_.accumulate(b.ln1_bias, scaled(std::move(ln1.dbias)));
        dtokens += ln1.dx;
    }

    Tensor2 dseg_type(1, d);
    std::copy(dtokens.row(0).begin(), dtokens.row(0).end(), dseg_type.row(0).begin());
    params_.accumulate(seg_type_, scaled(std::move(dseg_type)));

    if (input_grads != nullptr) {
        input_grads->seg.assign(dtokens.row(0).begin(), dtokens.row(0).end());
        input_grads->embeddings = Tensor2(k, d);
        for (std::size_t r = 0; r < k; ++r) {
            std::copy(dtokens.row(r + 1).begin(), dtokens.row(r + 1).end(), input_grads->embeddings.row(r).begin());
        }
    }
    return l;
}

// ------------------------------------------------------------- selection

IndexSet select_top1_iou(const SelectionOutput& output) {
    if (output.similarities.empty()) return {};
    const auto it = std::max_element(output.similarities.begin(), output.similarities.end());
    return {static_cast<std::size_t>(it - output.similarities.begin())};
}

IndexSet select_threshold_iop(const SelectionOutput& output, double threshold) {
    IndexSet out;
    for (std::size_t k = 0; k < output.iop_predictions.size(); ++k) {
        if (output.iop_predictions[k] > threshold) out.push_back(k);
    }
    return out;
}

IndexSet select_union_top1_threshold(const SelectionOutput& output, double threshold) {
    std::set<std::size_t> merged;
    for (std::size_t k : select_top1_iou(output)) merged.insert(k);
    for (std::size_t k : select_threshold_iop(output, threshold)) merged.insert(k);
    return {merged.begin(), merged.end()};
}

IndexSet select_threshold_from_top5(const SelectionOutput& output, double threshold) {
    std::vector<std::size_t> order(output.similarities.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return output.similarities[a] > output.similarities[b];
    });
    if (order.size() > 5) order.resize(5);
    IndexSet out;
    for (std::size_t k : order) {
        if (output.iop_predictions[k] > threshold) out.push_back(k);
    }
    std::sort(out.begin(), out.end());
    return out;
}

BinaryMask predict_mask(const ProposalSet& set, const IndexSet& selected) {
    if (selected.empty()) return BinaryMask(set.image_h, set.image_w);
    std::vector<BinaryMask> masks;
    masks.reserve(selected.size());
    for (std::size_t k : selected) {
        if (k >= set.size()) {
            fail(ErrorCode::IndexOutOfRange, "proposal index " + std::to_string(k) + " of " + std::to_string(set.size()));
        }
        masks.push_back(set.proposals[k].mask);
    }
    return union_masks(masks);
}

// ----------------------------------------------------------- persistence

std::string encode_checkpoint(const SelectionModel& model) {
    ByteWriter w;
    w.put_bytes(kCheckpointMagic);
    w.put_u32(kCheckpointVersion);
    const std::string config = model_config_to_json(model.config()).dump();
    w.put_u32(static_cast<std::uint32_t>(config.size()));
    w.put_bytes(config);
    const ParamStore& ps = model.params();
    w.put_u32(static_cast<std::uint32_t>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        w.put_u32(static_cast<std::uint32_t>(ps.name(i).size()));
        w.put_bytes(ps.name(i));
        w.put_u32(static_cast<std::uint32_t>(ps.value(i).rows()));
        w.put_u32(static_cast<std::uint32_t>(ps.value(i).cols()));
        for (double v : ps.value(i).values()) w.put_f32(static_cast<float>(v));
    }
    return w.bytes();
}

SelectionModel decode_checkpoint(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.take(4) != kCheckpointMagic) fail(ErrorCode::ParseError, "not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version));
    const std::uint32_t config_len = r.u32();
    const std::size_t config_offset = r.offset();
    const json config_json = parse_json(r.take(config_len), "checkpoint config at byte " + std::to_string(config_offset));
    ModelConfig config;
    try {
        config = model_config_from_json(config_json);
    } catch (const Error& e) {
        fail(ErrorCode::ParseError, std::string("checkpoint config: ") + e.what());
    }
    SelectionModel model(config);
    ParamStore& ps = model.params();
    const std::uint32_t count = r.u32();
    std::vector<bool> seen(ps.size(), false);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name(r.take(r.u32()));
        if (!ps.contains(name)) fail(ErrorCode::ShapeMismatch, "checkpoint tensor '" + name + "' is not part of the model");
        const std::size_t idx = ps.index_of(name);
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        Tensor2& dst = ps.value(idx);
        if (rows != dst.rows() || cols != dst.cols()) {
            fail(ErrorCode::ShapeMismatch, "tensor '" + name + "' is " + std::to_string(rows) + "x" +
                                               std::to_string(cols) + ", config expects " +
                                               std::to_string(dst.rows()) + "x" + std::to_string(dst.cols()));
        }
        for (double& v : dst.values()) {
            const float f = r.f32();
            if (!std::isfinite(f)) fail(ErrorCode::ParseError, "non-finite weight in '" + name + "'");
            v = static_cast<double>(f);
        }
        seen[idx] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) fail(ErrorCode::ShapeMismatch, "checkpoint is missing tensor '" + ps.name(i) + "'");
    }
    if (!r.at_end()) fail(ErrorCode::ParseError, "trailing bytes at " + std::to_string(r.offset()));
    return model;
}

void save_checkpoint(const SelectionModel& model, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(model));
}

SelectionModel load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string encode_seg_vector(std::span<const double> seg) {
    ByteWriter w;
    w.put_bytes(kSegMagic);
    w.put_u32(static_cast<std::uint32_t>(seg.size()));
    for (double v : seg) w.put_f32(static_cast<float>(v));
    return w.bytes();
}

std::vector<double> decode_seg_vector(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.take(4) != kSegMagic) fail(ErrorCode::ParseError, "not a SEG vector file (bad magic)");
    std::vector<double> seg(r.u32());
    for (double& v : seg) {
        const float f = r.f32();
        if (!std::isfinite(f)) fail(ErrorCode::ParseError, "non-finite SEG value");
        v = f;
    }
    if (!r.at_end()) fail(ErrorCode::ParseError, "trailing bytes at " + std::to_string(r.offset()));
    return seg;
}

void save_seg_vector(std::span<const double> seg, const std::filesystem::path& path) {
    write_file(path, encode_seg_vector(seg));
}

std::vector<double> load_seg_vector(const std::filesystem::path& path) { return decode_seg_vector(read_file(path)); }

}  // namespace llmseg
