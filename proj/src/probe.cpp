#include "faclens/probe.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "faclens/error.hpp"
#include "faclens/evaluation.hpp"
#include "faclens/feature_store.hpp"
#include "faclens/rng.hpp"

namespace faclens {

// ---- matrices from feature sets -------------------------------------------------

Matrix to_matrix(const FeatureSet& set) {
    Matrix m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(set.dim()));
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& h = set[i].hidden;
        for (std::size_t k = 0; k < h.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = h[k];
    }
    return m;
}

Matrix to_matrix(const FeatureSet& set, const std::vector<std::size_t>& rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(set.dim()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& h = set[rows[r]].hidden;
        for (std::size_t k = 0; k < h.size(); ++k) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = h[k];
    }
    return m;
}

// ---- model construction -----------------------------------------------------------

namespace {

Affine zero_affine(std::size_t in, std::size_t out) {
    return {Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
            Vector::Zero(static_cast<Eigen::Index>(out))};
}

void fill_uniform(Affine& layer, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-bound, bound);
}

template <typename Model, typename Span>
std::vector<Span> collect(Model& m) {
    std::vector<Span> out;
    auto add = [&](auto& layer) {
        out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    };
    if (m.adapter) add(*m.adapter);
    for (auto& layer : m.encoder) add(layer);
    add(m.classifier);
    return out;
}

}  // namespace

ProbeModel ProbeModel::zeros(const ModelShape& shape) {
    if (shape.input_dim == 0 || shape.hidden_width == 0) throw InputError("model dims must be positive");
    ProbeModel m;
    if (shape.adapter_input_dim) {
        if (*shape.adapter_input_dim == 0) throw InputError("adapter input dim must be positive");
        m.adapter = zero_affine(*shape.adapter_input_dim, shape.input_dim);
    }
    std::size_t in = shape.input_dim;
    for (auto& layer : m.encoder) {
        layer = zero_affine(in, shape.hidden_width);
        in = shape.hidden_width;
    }
    m.classifier = zero_affine(shape.hidden_width, kNumClasses);
    return m;
}

ProbeModel ProbeModel::initialize(const ModelShape& shape, std::uint64_t seed) {
    ProbeModel m = zeros(shape);
    Rng rng(seed);
    if (m.adapter) fill_uniform(*m.adapter, rng);
    for (auto& layer : m.encoder) fill_uniform(layer, rng);
    fill_uniform(m.classifier, rng);
    return m;
}

ModelShape ProbeModel::shape() const {
    ModelShape s;
    s.input_dim = input_dim();
    s.hidden_width = hidden_width();
    if (adapter) s.adapter_input_dim = adapter->in_dim();
    return s;
}

std::size_t ProbeModel::parameter_count() const {
    std::size_t n = 0;
    for (auto t : tensors(*this)) n += t.size();
    return n;
}

InputRoute ProbeModel::route_for(std::size_t dim) const {
    if (adapter && adapter->in_dim() == dim) return InputRoute::adapted;
    if (dim == input_dim()) return InputRoute::native;
    throw DimensionMismatch(adapter ? adapter->in_dim() : input_dim(), dim, "probe input");
}

std::size_t ProbeModel::route_dim(InputRoute route) const {
    if (route == InputRoute::adapted) {
        if (!adapter) throw InputError("model has no adapter");
        return adapter->in_dim();
    }
    return input_dim();
}

void ProbeModel::attach_adapter(std::size_t target_dim, std::uint64_t seed) {
    Affine a = zero_affine(target_dim, input_dim());
    if (target_dim == input_dim()) {
        a.weight.setIdentity();
    } else {
        Rng rng(seed);
        fill_uniform(a, rng);
    }
    adapter = std::move(a);
}

bool ProbeModel::all_finite() const {
    for (auto t : tensors(*this)) {
        for (double v : t) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

std::vector<std::span<double>> tensors(ProbeModel& model) {
    return collect<ProbeModel, std::span<double>>(model);
}

std::vector<std::span<const double>> tensors(const ProbeModel& model) {
    return collect<const ProbeModel, std::span<const double>>(model);
}

std::vector<std::string> tensor_names(const ProbeModel& model) {
    std::vector<std::string> names;
    if (model.adapter) names.insert(names.end(), {"adapter.weight", "adapter.bias"});
    for (std::size_t l = 0; l < kEncoderDepth; ++l) {
        names.push_back("encoder." + std::to_string(l) + ".weight");
        names.push_back("encoder." + std::to_string(l) + ".bias");
    }
    names.insert(names.end(), {"classifier.weight", "classifier.bias"});
    return names;
}

// ---- forward ----------------------------------------------------------------------

namespace {

PredictionVector softmax2(double l0, double l1) {
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m);
    const double e1 = std::exp(l1 - m);
    const double s = e0 + e1;
    return {e0 / s, e1 / s};
}

}  // namespace

ForwardResult forward(const ProbeModel& model, const Vector& x, InputRoute route) {
    const std::size_t expected = model.route_dim(route);
    if (static_cast<std::size_t>(x.size()) != expected) {
        throw DimensionMismatch(expected, static_cast<std::size_t>(x.size()), "forward");
    }
    Vector h = route == InputRoute::adapted ? Vector(model.adapter->weight * x + model.adapter->bias) : x;
    for (const auto& layer : model.encoder) {
        h = (layer.weight * h + layer.bias).cwiseMax(0.0);
    }
    const Vector logits = model.classifier.weight * h + model.classifier.bias;
    return {std::move(h), softmax2(logits[0], logits[1])};
}

ForwardResult forward(const ProbeModel& model, std::span<const float> x) {
    Vector v(static_cast<Eigen::Index>(x.size()));
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (!std::isfinite(x[k])) throw InputError("forward: non-finite input component");
        v[static_cast<Eigen::Index>(k)] = x[k];
    }
    return forward(model, v, model.route_for(x.size()));
}

BatchForward forward_batch(const ProbeModel& model, const Matrix& x, InputRoute route) {
    const std::size_t expected = model.route_dim(route);
    if (static_cast<std::size_t>(x.cols()) != expected) {
        throw DimensionMismatch(expected, static_cast<std::size_t>(x.cols()), "forward_batch");
    }
    BatchForward f;
    if (route == InputRoute::adapted) {
        f.encoder_input = (x * model.adapter->weight.transpose()).rowwise() + model.adapter->bias.transpose();
    } else {
        f.encoder_input = x;
    }
    const Matrix* in = &f.encoder_input;
    for (std::size_t l = 0; l < kEncoderDepth; ++l) {
        const auto& layer = model.encoder[l];
        f.pre[l] = ((*in) * layer.weight.transpose()).rowwise() + layer.bias.transpose();
        f.act[l] = f.pre[l].cwiseMax(0.0);
        in = &f.act[l];
    }
    f.logits = (f.z() * model.classifier.weight.transpose()).rowwise() + model.classifier.bias.transpose();
    f.probs.resize(f.logits.rows(), 2);
    for (Eigen::Index i = 0; i < f.logits.rows(); ++i) {
        const auto p = softmax2(f.logits(i, 0), f.logits(i, 1));
        f.probs(i, 0) = p.p_factual;
        f.probs(i, 1) = p.p_nonfactual;
    }
    return f;
}

void backward_batch(const ProbeModel& model, const Matrix& x, InputRoute route, const BatchForward& fwd,
                    const Matrix* d_logits, const Matrix* d_z, ProbeModel& grads) {
    const Eigen::Index n = fwd.z().rows();
    Matrix upstream = Matrix::Zero(n, fwd.z().cols());
    if (d_logits != nullptr) {
        grads.classifier.weight.noalias() += d_logits->transpose() * fwd.z();
        grads.classifier.bias += d_logits->colwise().sum().transpose();
        upstream.noalias() += (*d_logits) * model.classifier.weight;
    }
    if (d_z != nullptr) upstream += *d_z;

    for (std::size_t l = kEncoderDepth; l-- > 0;) {
        const Matrix d_pre = upstream.cwiseProduct((fwd.pre[l].array() > 0.0).cast<double>().matrix());
        const Matrix& in = l == 0 ? fwd.encoder_input : fwd.act[l - 1];
        grads.encoder[l].weight.noalias() += d_pre.transpose() * in;
        grads.encoder[l].bias += d_pre.colwise().sum().transpose();
        if (l > 0 || route == InputRoute::adapted) upstream = d_pre * model.encoder[l].weight;
    }
    if (route == InputRoute::adapted) {
        grads.adapter->weight.noalias() += upstream.transpose() * x;
        grads.adapter->bias += upstream.colwise().sum().transpose();
    }
}

double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* d_logits) {
    const Eigen::Index n = logits.rows();
    if (n == 0) throw InputError("cross-entropy over an empty batch");
    if (static_cast<std::size_t>(n) != labels.size()) throw InputError("label count differs from batch size");
    if (d_logits != nullptr) d_logits->resize(n, 2);
    std::vector<double> losses(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y != 0 && y != 1) throw InputError("labels must be 0 or 1");
        const double l0 = logits(i, 0), l1 = logits(i, 1);
        const double m = std::max(l0, l1);
        const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
        losses[static_cast<std::size_t>(i)] = lse - logits(i, y);
        if (d_logits != nullptr) {
            const auto p = softmax2(l0, l1);
            (*d_logits)(i, 0) = (p.p_factual - (y == 0 ? 1.0 : 0.0)) / static_cast<double>(n);
            (*d_logits)(i, 1) = (p.p_nonfactual - (y == 1 ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
}

LossAndGrads ce_loss_and_grads(const ProbeModel& model, const Matrix& x, std::span<const int> labels,
                               InputRoute route) {
    const BatchForward fwd = forward_batch(model, x, route);
    Matrix d_logits;
    LossAndGrads out{cross_entropy(fwd.logits, labels, &d_logits), model.zeros_like()};
    backward_batch(model, x, route, fwd, &d_logits, nullptr, out.grads);
    return out;
}

double ce_loss(const ProbeModel& model, const Matrix& x, std::span<const int> labels, InputRoute route) {
    return cross_entropy(forward_batch(model, x, route).logits, labels, nullptr);
}

// ---- optimizer --------------------------------------------------------------------

AdamW::AdamW(const ProbeModel& like, AdamConfig config)
    : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {}

void AdamW::step(ProbeModel& params, const ProbeModel& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto p = tensors(params);
    auto g = tensors(grads);
    auto m = tensors(m_);
    auto v = tensors(v_);
    if (p.size() != g.size() || p.size() != m.size()) throw Error("AdamW: parameter layout changed");
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t k = 0; k < p[t].size(); ++k) {
            const double gk = g[t][k];
            m[t][k] = config_.beta1 * m[t][k] + (1.0 - config_.beta1) * gk;
            v[t][k] = config_.beta2 * v[t][k] + (1.0 - config_.beta2) * gk * gk;
            const double mhat = m[t][k] / bc1;
            const double vhat = v[t][k] / bc2;
            p[t][k] -= config_.learning_rate * config_.weight_decay * p[t][k];
            p[t][k] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

// ---- training ---------------------------------------------------------------------

LabeledData LabeledData::from(const FeatureSet& set) {
    LabeledData d;
    d.x = to_matrix(set);
    d.y.reserve(set.size());
    d.ids.reserve(set.size());
    for (const auto& r : set.records()) {
        if (!is_labeled(r.label)) throw InputError("record '" + r.question_id + "' is unlabeled");
        d.y.push_back(label_value(r.label));
        d.ids.push_back(r.question_id);
    }
    return d;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !(weight_decay >= 0.0) || max_epochs <= 0 || batch_size == 0 || patience <= 0 ||
        hidden_width == 0) {
        throw InputError("invalid training configuration");
    }
}

namespace {

void require_both_classes(std::span<const int> y, const char* what) {
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) {
        throw InputError(std::string(what) + " holds a single class; AUC is undefined");
    }
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
    return out;
}

}  // namespace

std::vector<double> positive_scores(const ProbeModel& model, const Matrix& x, InputRoute route) {
    const BatchForward f = forward_batch(model, x, route);
    std::vector<double> s(static_cast<std::size_t>(f.probs.rows()));
    for (Eigen::Index i = 0; i < f.probs.rows(); ++i) s[static_cast<std::size_t>(i)] = f.probs(i, 1);
    return s;
}

TrainResult train(ProbeModel model, const LabeledData& train_data, const LabeledData& val_data,
                  const TrainConfig& config) {
    config.validate();
    if (train_data.size() == 0) throw InputError("empty training set");
    require_both_classes(train_data.y, "training set");
    require_both_classes(val_data.y, "validation set");
    const InputRoute route = model.route_for(static_cast<std::size_t>(train_data.x.cols()));
    const InputRoute val_route = model.route_for(static_cast<std::size_t>(val_data.x.cols()));

    AdamW opt(model, config.adam());
    Rng rng(config.seed ^ 0x5EEDBA7C4ull);
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result{model, {}, 0, -1.0};
    int since_best = 0;
    std::vector<int> batch_y;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            const std::span<const std::size_t> rows(order.data() + start, stop - start);
            const Matrix xb = gather_rows(train_data.x, rows);
            batch_y.clear();
            for (auto r : rows) batch_y.push_back(train_data.y[r]);
            LossAndGrads lg = ce_loss_and_grads(model, xb, batch_y, route);
            opt.step(model, lg.grads);
            loss_sum += lg.loss;
            ++batches;
        }
        if (!model.all_finite()) throw Error("training diverged: non-finite parameters at epoch " + std::to_string(epoch));
        const double val_auc = auc(positive_scores(model, val_data.x, val_route), val_data.y);
        result.history.push_back({epoch, loss_sum / batches, 0.0, val_auc});
        if (val_auc > result.best_val_auc) {
            result.best_val_auc = val_auc;
            result.best_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

TrainResult train(const FeatureSet& train_set, const FeatureSet& val_set, const TrainConfig& config) {
    if (train_set.dim() != val_set.dim()) {
        throw DimensionMismatch(train_set.dim(), val_set.dim(), "validation features");
    }
    ModelShape shape;
    shape.input_dim = train_set.dim();
    shape.hidden_width = config.hidden_width;
    return train(ProbeModel::initialize(shape, config.seed), LabeledData::from(train_set),
                 LabeledData::from(val_set), config);
}

// ---- batch inference ----------------------------------------------------------------

namespace {

template <typename Out, typename Fn>
std::vector<Out> map_records(const ProbeModel& model, const FeatureSet& features, bool parallel, Fn&& fn) {
    const InputRoute route = features.empty() ? InputRoute::native : model.route_for(features.dim());
    if (!features.empty() && model.route_dim(route) != features.dim()) {
        throw DimensionMismatch(model.route_dim(route), features.dim(), "predict");
    }
    const auto n = static_cast<std::ptrdiff_t>(features.size());
    std::vector<Out> out(features.size());
    const auto one = [&](std::ptrdiff_t i) {
        const auto& h = features[static_cast<std::size_t>(i)].hidden;
        Vector x(static_cast<Eigen::Index>(h.size()));
        for (std::size_t k = 0; k < h.size(); ++k) x[static_cast<Eigen::Index>(k)] = h[k];
        out[static_cast<std::size_t>(i)] = fn(forward(model, x, route));
    };
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    }
    return out;
}

}  // namespace

std::vector<PredictionVector> predict_batch(const ProbeModel& model, const FeatureSet& features) {
    return map_records<PredictionVector>(model, features, true, [](ForwardResult r) { return r.p; });
}

std::vector<PredictionVector> predict_batch_serial(const ProbeModel& model, const FeatureSet& features) {
    return map_records<PredictionVector>(model, features, false, [](ForwardResult r) { return r.p; });
}

std::vector<ForwardResult> forward_all(const ProbeModel& model, const FeatureSet& features) {
    return map_records<ForwardResult>(model, features, true, [](ForwardResult r) { return r; });
}

}  // namespace faclens
