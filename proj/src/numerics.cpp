#include "llmseg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "llmseg/error.hpp"

namespace llmseg {

namespace {

std::string shape(const Tensor2& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void require(bool ok, ErrorCode code, const std::string& message) {
    if (!ok) fail(code, message);
}

}  // namespace

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    require(values_.size() == rows * cols, ErrorCode::LengthMismatch,
            "tensor " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                std::to_string(values_.size()) + " values");
    for (double v : values_) require(std::isfinite(v), ErrorCode::InvalidArgument, "tensor value is not finite");
}

Tensor2 Tensor2::row_vector(std::span<const double> values) {
    return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Tensor2::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor2& Tensor2::operator+=(const Tensor2& other) {
    require(same_shape(other), ErrorCode::DimensionMismatch, "add " + shape(*this) + " += " + shape(other));
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b, bool transpose_a, bool transpose_b) {
    const std::size_t m = transpose_a ? a.cols() : a.rows();
    const std::size_t inner = transpose_a ? a.rows() : a.cols();
    const std::size_t inner_b = transpose_b ? b.cols() : b.rows();
    const std::size_t n = transpose_b ? b.rows() : b.cols();
    require(inner == inner_b, ErrorCode::DimensionMismatch, "matmul " + shape(a) + " by " + shape(b));
    Tensor2 out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < inner; ++p) {
            const double av = transpose_a ? a(p, i) : a(i, p);
            if (av == 0.0) continue;
            double* dst = out.row(i).data();
            if (transpose_b) {
                for (std::size_t j = 0; j < n; ++j) dst[j] += av * b(j, p);
            } else {
                const double* src = b.row(p).data();
                for (std::size_t j = 0; j < n; ++j) dst[j] += av * src[j];
            }
        }
    }
    return out;
}

Tensor2 transpose(const Tensor2& a) {
    Tensor2 out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    }
    return out;
}

Tensor2 column_sums(const Tensor2& a) {
    Tensor2 out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
    }
    return out;
}

Tensor2 linear_forward(const Tensor2& x, const Tensor2& weight, const Tensor2& bias) {
    require(bias.rows() == 1 && bias.cols() == weight.cols(), ErrorCode::DimensionMismatch,
            "bias " + shape(bias) + " for weight " + shape(weight));
    Tensor2 y = matmul(x, weight);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bias(0, j);
    }
    return y;
}

LinearGrads linear_backward(const Tensor2& x, const Tensor2& weight, const Tensor2& dy) {
    require(dy.rows() == x.rows() && dy.cols() == weight.cols(), ErrorCode::DimensionMismatch,
            "linear backward dy " + shape(dy));
    return {matmul(dy, weight, false, true), matmul(x, dy, true, false), column_sums(dy)};
}

std::vector<double> softmax_temp(std::span<const double> logits, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::InvalidTemperature, "temperature must be positive");
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - peak) / tau);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

std::vector<double> softmax_temp_backward(std::span<const double> probs, std::span<const double> dprobs, double tau) {
    require(probs.size() == dprobs.size(), ErrorCode::LengthMismatch, "softmax backward length mismatch");
    if (!(tau > 0.0)) fail(ErrorCode::InvalidTemperature, "temperature must be positive");
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * dprobs[i];
    std::vector<double> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (dprobs[i] - dot) / tau;
    return out;
}

Tensor2 layer_norm_forward(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, LayerNormCache* cache) {
    require(gain.rows() == 1 && gain.cols() == x.cols() && bias.same_shape(gain), ErrorCode::DimensionMismatch,
            "layer norm gain/bias " + shape(gain) + " for input " + shape(x));
    const std::size_t n = x.cols();
    Tensor2 normalized(x.rows(), n);
    std::vector<double> inv_std(x.rows());
    Tensor2 y(x.rows(), n);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (double v : x.row(i)) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : x.row(i)) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        for (std::size_t j = 0; j < n; ++j) {
            normalized(i, j) = (x(i, j) - mean) * inv_std[i];
            y(i, j) = normalized(i, j) * gain(0, j) + bias(0, j);
        }
    }
    if (cache != nullptr) *cache = {std::move(normalized), std::move(inv_std)};
    return y;
}

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor2& gain, const Tensor2& dy) {
    require(dy.same_shape(cache.normalized), ErrorCode::DimensionMismatch, "layer norm backward dy " + shape(dy));
    const std::size_t n = dy.cols();
    LayerNormGrads g{Tensor2(dy.rows(), n), Tensor2(1, n), Tensor2(1, n)};
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double dxhat = dy(i, j) * gain(0, j);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * cache.normalized(i, j);
            g.dgain(0, j) += dy(i, j) * cache.normalized(i, j);
            g.dbias(0, j) += dy(i, j);
        }
        mean_dxhat /= static_cast<double>(n);
        mean_dxhat_xhat /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double dxhat = dy(i, j) * gain(0, j);
            g.dx(i, j) = cache.inv_std[i] * (dxhat - mean_dxhat - cache.normalized(i, j) * mean_dxhat_xhat);
        }
    }
    return g;
}

namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace

Tensor2 gelu_forward(const Tensor2& x) {
    Tensor2 y(x.rows(), x.cols());
    auto out = y.values();
    const auto in = x.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double v = in[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluScale * (v + kGeluCubic * v * v * v)));
    }
    return y;
}

Tensor2 gelu_backward(const Tensor2& x, const Tensor2& dy) {
    require(x.same_shape(dy), ErrorCode::DimensionMismatch, "gelu backward shape");
    Tensor2 dx(x.rows(), x.cols());
    auto out = dx.values();
    const auto in = x.values();
    const auto up = dy.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double v = in[i];
        const double t = std::tanh(kGeluScale * (v + kGeluCubic * v * v * v));
        const double dinner = kGeluScale * (1.0 + 3.0 * kGeluCubic * v * v);
        out[i] = up[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner);
    }
    return dx;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

void check_attention_shapes(const Tensor2& queries, const Tensor2& keys, const Tensor2& values,
                            const AttentionWeights& w) {
    const std::size_t d = w.wq.rows();
    if (w.heads == 0 || d % w.heads != 0) {
        fail(ErrorCode::InvalidHeadCount, std::to_string(w.heads) + " heads for model dim " + std::to_string(d));
    }
    for (const Tensor2* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
        require(m->rows() == d && m->cols() == d, ErrorCode::DimensionMismatch, "attention projection " + shape(*m));
    }
    for (const Tensor2* b : {&w.bq, &w.bk, &w.bv, &w.bo}) {
        require(b->rows() == 1 && b->cols() == d, ErrorCode::DimensionMismatch, "attention bias " + shape(*b));
    }
    require(queries.cols() == d && keys.cols() == d && values.cols() == d, ErrorCode::DimensionMismatch,
            "attention inputs must have model dim " + std::to_string(d));
    require(keys.rows() == values.rows(), ErrorCode::DimensionMismatch, "keys and values differ in length");
    require(keys.rows() > 0, ErrorCode::DimensionMismatch, "attention over an empty key set");
}

}  // namespace

Tensor2 attention_forward(const Tensor2& queries, const Tensor2& keys, const Tensor2& values,
                          const AttentionWeights& w, AttentionCache* cache) {
    check_attention_shapes(queries, keys, values, w);
    const std::size_t d = w.wq.rows();
    const std::size_t dh = d / w.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor2 q = linear_forward(queries, w.wq, w.bq);
    Tensor2 k = linear_forward(keys, w.wk, w.bk);
    Tensor2 v = linear_forward(values, w.wv, w.bv);
    const std::size_t nq = queries.rows();
    const std::size_t nk = keys.rows();
    Tensor2 concat(nq, d);
    std::vector<Tensor2> probs;
    probs.reserve(w.heads);
    std::vector<double> logits(nk);
    for (std::size_t h = 0; h < w.heads; ++h) {
        const std::size_t off = h * dh;
        Tensor2 p(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
                logits[j] = s * scale;
            }
            const std::vector<double> row = softmax_temp(logits, 1.0);
            std::copy(row.begin(), row.end(), p.row(i).begin());
            for (std::size_t j = 0; j < nk; ++j) {
                for (std::size_t c = 0; c < dh; ++c) concat(i, off + c) += row[j] * v(j, off + c);
            }
        }
        probs.push_back(std::move(p));
    }
    Tensor2 y = linear_forward(concat, w.wo, w.bo);
    if (cache != nullptr) {
        *cache = {queries, keys, values, std::move(q), std::move(k), std::move(v), std::move(probs), std::move(concat)};
    }
    return y;
}

AttentionGrads attention_backward(const AttentionCache& cache, const AttentionWeights& w, const Tensor2& dy) {
    const std::size_t d = w.wq.rows();
    const std::size_t dh = d / w.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t nq = cache.q.rows();
    const std::size_t nk = cache.k.rows();

    AttentionGrads g;
    LinearGrads out = linear_backward(cache.concat, w.wo, dy);
    g.dwo = std::move(out.dweight);
    g.dbo = std::move(out.dbias);
    const Tensor2& dconcat = out.dx;

    Tensor2 dq(nq, d);
    Tensor2 dk(nk, d);
    Tensor2 dv(nk, d);
    std::vector<double> dp(nk);
    for (std::size_t h = 0; h < w.heads; ++h) {
        const std::size_t off = h * dh;
        const Tensor2& p = cache.probs[h];
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    s += dconcat(i, off + c) * cache.v(j, off + c);
                    dv(j, off + c) += p(i, j) * dconcat(i, off + c);
                }
                dp[j] = s;
            }
            const std::vector<double> dlogits = softmax_temp_backward(p.row(i), dp, 1.0);
            for (std::size_t j = 0; j < nk; ++j) {
                const double ds = dlogits[j] * scale;
                for (std::size_t c = 0; c < dh; ++c) {
                    dq(i, off + c) += ds * cache.k(j, off + c);
                    dk(j, off + c) += ds * cache.q(i, off + c);
                }
            }
        }
    }

    LinearGrads gq = linear_backward(cache.queries_in, w.wq, dq);
    LinearGrads gk = linear_backward(cache.keys_in, w.wk, dk);
    LinearGrads gv = linear_backward(cache.values_in, w.wv, dv);
    g.dqueries = std::move(gq.dx);
    g.dwq = std::move(gq.dweight);
    g.dbq = std::move(gq.dbias);
    g.dkeys = std::move(gk.dx);
    g.dwk = std::move(gk.dweight);
    g.dbk = std::move(gk.dbias);
    g.dvalues = std::move(gv.dx);
    g.dwv = std::move(gv.dweight);
    g.dbv = std::move(gv.dbias);
    return g;
}

std::size_t ParamStore::add(std::string name, Tensor2 value) {
    require(!contains(name), ErrorCode::InvalidArgument, "duplicate parameter '" + name + "'");
    Tensor2 grad(value.rows(), value.cols());
    entries_.push_back({std::move(name), std::move(value), std::move(grad), false});
    return entries_.size() - 1;
}

std::size_t ParamStore::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    fail(ErrorCode::InvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

bool ParamStore::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

void ParamStore::accumulate(std::size_t i, const Tensor2& delta) {
    entries_[i].grad += delta;
    entries_[i].has_grad = true;
}

void ParamStore::scale_grads(double factor) {
    for (Entry& e : entries_) {
        for (double& g : e.grad.values()) g *= factor;
    }
}

void ParamStore::zero_grad() {
    for (Entry& e : entries_) {
        e.grad.fill(0.0);
        e.has_grad = false;
    }
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
}

double warmup_decay_lr(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps, double base_lr) {
    if (warmup_steps > total_steps || step > total_steps) {
        fail(ErrorCode::InvalidSchedule, "step " + std::to_string(step) + " warmup " + std::to_string(warmup_steps) +
                                             " total " + std::to_string(total_steps));
    }
    if (step <= warmup_steps) {
        if (warmup_steps == 0) return base_lr;
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

OptimizerState::OptimizerState(const ParamStore& params, AdamWConfig config) : config_(config) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        first_moment_.emplace_back(params.value(i).rows(), params.value(i).cols());
        second_moment_.emplace_back(params.value(i).rows(), params.value(i).cols());
    }
}

void OptimizerState::apply(ParamStore& params, double lr) {
    require(params.size() == first_moment_.size(), ErrorCode::ShapeMismatch, "optimizer built for another model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.has_grad(i)) fail(ErrorCode::MissingGradient, "no gradient for '" + params.name(i) + "'");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params.value(i).values();
        const auto g = params.grad(i).values();
        auto m = first_moment_[i].values();
        auto v = second_moment_[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
            p[j] -= lr * config_.weight_decay * p[j] + lr * update;
        }
    }
}

double adamw_step(ParamStore& params, OptimizerState& state) {
    const AdamWConfig& c = state.config();
    const double lr = warmup_decay_lr(state.step() + 1, c.warmup_steps, c.total_steps, c.base_lr);
    state.apply(params, lr);
    return lr;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> point, double h) {
    if (!(h > 0.0)) fail(ErrorCode::InvalidArgument, "finite difference step must be positive");
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        const double step = h * std::max(1.0, std::abs(orig));
        x[i] = orig + step;
        const double up = f(x);
        x[i] = orig - step;
        const double down = f(x);
        x[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            fail(ErrorCode::NonFiniteEvaluation, "function is not finite near coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    require(analytic.size() == numeric.size(), ErrorCode::LengthMismatch, "gradient length mismatch");
    double diff = 0.0;
    double scale = floor;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

}  // namespace llmseg
