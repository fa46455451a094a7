#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llmseg {

/// Dense row-major matrix of doubles. Biases and vectors are 1×n.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Rejects NaN/Inf and size mismatches.
    Tensor2(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor2 row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {values_.data() + r * cols_, cols_}; }

    bool same_shape(const Tensor2& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    void fill(double v);
    Tensor2& operator+=(const Tensor2& other);

    friend bool operator==(const Tensor2&, const Tensor2&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

/// a·b with optional transposes of either operand.
Tensor2 matmul(const Tensor2& a, const Tensor2& b, bool transpose_a = false, bool transpose_b = false);
Tensor2 transpose(const Tensor2& a);
/// Column sums as a 1×cols tensor.
Tensor2 column_sums(const Tensor2& a);

// ---------------------------------------------------------------- linear

Tensor2 linear_forward(const Tensor2& x, const Tensor2& weight, const Tensor2& bias);

struct LinearGrads {
    Tensor2 dx;
    Tensor2 dweight;
    Tensor2 dbias;
};

LinearGrads linear_backward(const Tensor2& x, const Tensor2& weight, const Tensor2& dy);

// --------------------------------------------------------------- softmax

/// softmax(logits / tau) with max subtraction.
std::vector<double> softmax_temp(std::span<const double> logits, double tau);
/// Gradient w.r.t. the logits given the forward output and d(loss)/d(probs).
std::vector<double> softmax_temp_backward(std::span<const double> probs, std::span<const double> dprobs, double tau);

// ------------------------------------------------------------ layer norm

inline constexpr double kLayerNormEpsilon = 1e-5;

struct LayerNormCache {
    Tensor2 normalized;
    std::vector<double> inv_std;
};

Tensor2 layer_norm_forward(const Tensor2& x, const Tensor2& gain, const Tensor2& bias,
                           LayerNormCache* cache = nullptr);

struct LayerNormGrads {
    Tensor2 dx;
    Tensor2 dgain;
    Tensor2 dbias;
};

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor2& gain, const Tensor2& dy);

// ----------------------------------------------------------- activations

/// tanh-approximated GELU; smooth everywhere, which keeps finite-difference
/// checks free of kinks.
Tensor2 gelu_forward(const Tensor2& x);
Tensor2 gelu_backward(const Tensor2& x, const Tensor2& dy);
double sigmoid(double x);

// ------------------------------------------------------------- attention

struct AttentionWeights {
    const Tensor2& wq;
    const Tensor2& bq;
    const Tensor2& wk;
    const Tensor2& bk;
    const Tensor2& wv;
    const Tensor2& bv;
    const Tensor2& wo;
    const Tensor2& bo;
    std::size_t heads;
};

struct AttentionCache {
    Tensor2 queries_in;
    Tensor2 keys_in;
    Tensor2 values_in;
    Tensor2 q;
    Tensor2 k;
    Tensor2 v;
    std::vector<Tensor2> probs;  // per head, Nq×Nk
    Tensor2 concat;              // Nq×d, pre output projection
};

/// Multi-head scaled dot-product attention followed by an output
/// projection. Self-attention is the call with queries == keys == values.
Tensor2 attention_forward(const Tensor2& queries, const Tensor2& keys, const Tensor2& values,
                          const AttentionWeights& weights, AttentionCache* cache = nullptr);

struct AttentionGrads {
    Tensor2 dqueries;
    Tensor2 dkeys;
    Tensor2 dvalues;
    Tensor2 dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo;
};

AttentionGrads attention_backward(const AttentionCache& cache, const AttentionWeights& weights, const Tensor2& dy);

// ------------------------------------------------------- parameter store

/// Named parameters with same-shaped gradient accumulators.
class ParamStore {
public:
    std::size_t add(std::string name, Tensor2 value);
    std::size_t index_of(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const noexcept { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].name; }
    Tensor2& value(std::size_t i) { return entries_[i].value; }
    const Tensor2& value(std::size_t i) const { return entries_[i].value; }
    const Tensor2& grad(std::size_t i) const { return entries_[i].grad; }
    bool has_grad(std::size_t i) const { return entries_[i].has_grad; }

    /// grad[i] += delta; marks the slot populated.
    void accumulate(std::size_t i, const Tensor2& delta);
    void scale_grads(double factor);
    void zero_grad();
    std::size_t total_elements() const;

private:
    struct Entry {
        std::string name;
        Tensor2 value;
        Tensor2 grad;
        bool has_grad = false;
    };
    std::vector<Entry> entries_;
};

// ------------------------------------------------------------- optimizer

struct AdamWConfig {
    double base_lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t warmup_steps = 100;
    std::uint64_t total_steps = 5000;
};

/// Linear ramp 0 → base_lr over the warmup, then linear decay to 0 at total_steps.
double warmup_decay_lr(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps, double base_lr);

class OptimizerState {
public:
    OptimizerState(const ParamStore& params, AdamWConfig config);

    const AdamWConfig& config() const noexcept { return config_; }
    std::uint64_t step() const noexcept { return step_; }

    /// One decoupled-weight-decay Adam update at an explicit learning rate.
    void apply(ParamStore& params, double lr);

private:
    AdamWConfig config_;
    std::vector<Tensor2> first_moment_;
    std::vector<Tensor2> second_moment_;
    std::uint64_t step_ = 0;
};

/// Advances the optimizer one step with the learning rate from the schedule
/// and returns that rate. Throws MissingGradient if any slot is unpopulated.
double adamw_step(ParamStore& params, OptimizerState& state);

// --------------------------------------------------- gradient checking

/// Central differences with per-coordinate step h·max(1, |x_i|).
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> point, double h);

/// max|a−b| / max(max|a|, max|b|, floor). Norm-relative so that blocks whose
/// true gradient is zero are judged by absolute error against the floor.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6);

}  // namespace llmseg
