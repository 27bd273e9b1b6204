#include "sasg/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "sasg/rng.hpp"

namespace sasg {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix<double>>;
using RowMap = Eigen::Map<RowMatrix<double>>;

Index fc_param_count(const std::vector<Index>& layers) {
  Index n = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) n += layers[l + 1] * layers[l] + layers[l + 1];
  return n;
}

void check_dim(const Task& task, const ParamVector& w) {
  detail::require_same_size(task.dim, w.size(), "task parameters");
}

// Running mean keeps a batch of identical per-example gradients exact.
void running_mean_update(ParamVector& mean, const ParamVector& sample, Index count) {
  if (count == 1) {
    mean = sample;
    return;
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (Index i = 0; i < mean.size(); ++i) mean[i] += (sample[i] - mean[i]) * inv;
}

double softplus_neg(double z) {
  // log(1 + exp(-z)), stable on both tails.
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

double label_sign(int label) { return label > 0 ? 1.0 : -1.0; }

void quadratic_example(const Task& task, const ParamVector& w, const Dataset& data, Index row, double& loss,
                       ParamVector& grad) {
  ConstRowMap a(data.features.row(row).data(), task.rows, task.dim);
  const Vector<double> residual = a * w - data.targets.row(row).transpose();
  loss = 0.5 * sq_norm(residual);
  grad = a.transpose() * residual;
}

void logistic_example(const Task& task, const ParamVector& w, const Dataset& data, Index row, double& loss,
                      ParamVector& grad) {
  const auto x = data.features.row(row).transpose();
  const double y = label_sign(data.labels[static_cast<std::size_t>(row)]);
  const double z = y * dot(x, w);
  loss = softplus_neg(z);
  const double scale = -y / (1.0 + std::exp(z));
  grad = scale * x;
  if (task.l2 != 0.0) {
    loss += 0.5 * task.l2 * sq_norm(w);
    grad += task.l2 * w;
  }
}

LossGradient per_example_mean(const Task& task, const ParamVector& w, const Dataset& data,
                              std::span<const Index> rows) {
  LossGradient out;
  out.gradient = ParamVector::Zero(task.dim);
  ParamVector g;
  double l = 0.0;
  Index count = 0;
  for (Index row : rows) {
    if (task.kind == TaskKind::quadratic) {
      quadratic_example(task, w, data, row, l, g);
    } else {
      logistic_example(task, w, data, row, l, g);
    }
    ++count;
    out.loss += (l - out.loss) / static_cast<double>(count);
    running_mean_update(out.gradient, g, count);
  }
  return out;
}

RowMatrix<double> gather_rows(const Dataset& data, std::span<const Index> rows) {
  RowMatrix<double> x(static_cast<Index>(rows.size()), data.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Index>(i)) = data.features.row(rows[i]);
  return x;
}

Eigen::ArrayXXd sigmoid(const RowMatrix<double>& z) { return 1.0 / (1.0 + (-z.array()).exp()); }

struct FcView {
  Index weight_offset;
  Index bias_offset;
  Index in;
  Index out;
};

std::vector<FcView> fc_views(const Task& task) {
  std::vector<FcView> views;
  Index off = 0;
  for (std::size_t l = 0; l + 1 < task.layers.size(); ++l) {
    const Index in = task.layers[l];
    const Index out = task.layers[l + 1];
    views.push_back({off, off + out * in, in, out});
    off += out * in + out;
  }
  return views;
}

// Forward pass up to the logits; `acts` receives the input and every hidden activation.
RowMatrix<double> fc_forward(const Task& task, const ParamVector& w, const RowMatrix<double>& x,
                             std::vector<RowMatrix<double>>* acts) {
  const auto views = fc_views(task);
  RowMatrix<double> a = x;
  for (std::size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    ConstRowMap weight(w.data() + v.weight_offset, v.out, v.in);
    Eigen::Map<const Vector<double>> bias(w.data() + v.bias_offset, v.out);
    RowMatrix<double> z = a * weight.transpose();
    z.rowwise() += bias.transpose();
    if (acts) acts->push_back(std::move(a));
    if (l + 1 == views.size()) return z;
    a = sigmoid(z).matrix();
  }
  return a;
}

// Softmax probabilities in place of the logits; returns the mean cross-entropy.
double softmax_xent(RowMatrix<double>& logits, std::span<const int> labels) {
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = row.maxCoeff();
    row.array() -= mx;
    const double log_z = std::log(row.array().exp().sum());
    total += log_z - row[labels[static_cast<std::size_t>(i)]];
    row = (row.array() - log_z).exp().matrix();
  }
  return total / static_cast<double>(logits.rows());
}

LossGradient fc_loss_gradient(const Task& task, const ParamVector& w, const Dataset& data,
                              std::span<const Index> rows) {
  const RowMatrix<double> x = gather_rows(data, rows);
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.labels[static_cast<std::size_t>(rows[i])];

  std::vector<RowMatrix<double>> acts;
  RowMatrix<double> probs = fc_forward(task, w, x, &acts);
  LossGradient out;
  out.loss = softmax_xent(probs, labels);
  out.gradient.resize(task.dim);

  const double inv_b = 1.0 / static_cast<double>(rows.size());
  RowMatrix<double> delta = probs;
  for (std::size_t i = 0; i < labels.size(); ++i) delta(static_cast<Index>(i), labels[i]) -= 1.0;
  delta *= inv_b;

  const auto views = fc_views(task);
  for (std::size_t l = views.size(); l-- > 0;) {
    const auto& v = views[l];
    RowMap dweight(out.gradient.data() + v.weight_offset, v.out, v.in);
    Eigen::Map<Vector<double>> dbias(out.gradient.data() + v.bias_offset, v.out);
    dweight.noalias() = delta.transpose() * acts[l];
    dbias = delta.colwise().sum().transpose();
    if (l == 0) break;
    ConstRowMap weight(w.data() + v.weight_offset, v.out, v.in);
    RowMatrix<double> back = delta * weight;
    const auto& h = acts[l];
    delta = (back.array() * h.array() * (1.0 - h.array())).matrix();
  }
  return out;
}

void require_finite_loss(double value) {
  if (!std::isfinite(value)) throw std::runtime_error("non-finite loss encountered");
}

}  // namespace

Task make_quadratic_task(Index dim, Index rows) {
  if (dim < 1 || rows < 1) throw std::invalid_argument("quadratic task: dim and rows must be positive");
  Task t;
  t.kind = TaskKind::quadratic;
  t.dim = dim;
  t.rows = rows;
  return t;
}

Task make_logistic_task(Index dim, double l2) {
  if (dim < 1) throw std::invalid_argument("logistic task: dim must be positive");
  Task t;
  t.kind = TaskKind::logistic;
  t.dim = dim;
  t.l2 = l2;
  return t;
}

Task make_fc_task(std::vector<Index> layers) {
  if (layers.size() < 2) throw std::invalid_argument("fc_net: need at least input and output sizes");
  for (Index s : layers) {
    if (s < 1) throw std::invalid_argument("fc_net: layer sizes must be positive");
  }
  Task t;
  t.kind = TaskKind::fc_net;
  t.dim = fc_param_count(layers);
  t.layers = std::move(layers);
  return t;
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::quadratic: return "quadratic";
    case TaskKind::logistic: return "logistic";
    case TaskKind::fc_net: return "fc_net";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "quadratic") return TaskKind::quadratic;
  if (name == "logistic") return TaskKind::logistic;
  if (name == "fc_net") return TaskKind::fc_net;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

Index iterations_per_epoch(Index shard_size, Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  return (shard_size + batch_size - 1) / batch_size;
}

Batch sample_batch(const DataShard& shard, std::int64_t t, Index b, Sampling mode) {
  const Index n = shard.size();
  if (n == 0) throw std::invalid_argument("sample_batch: empty shard");
  Batch batch;
  if (mode == Sampling::with_replacement) {
    auto rng = keyed_rng({shard.seed, static_cast<std::uint64_t>(t)});
    std::uniform_int_distribution<Index> pick(0, n - 1);
    batch.positions.resize(static_cast<std::size_t>(b));
    for (auto& p : batch.positions) p = pick(rng);
    return batch;
  }
  const Index per_epoch = iterations_per_epoch(n, b);
  const auto epoch = static_cast<std::uint64_t>(t / per_epoch);
  const Index slot = t % per_epoch;
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  auto rng = keyed_rng({shard.seed, epoch, 0xe90cULL});
  std::shuffle(perm.begin(), perm.end(), rng);
  const Index begin = slot * b;
  const Index end = std::min(n, begin + b);
  batch.positions.assign(perm.begin() + begin, perm.begin() + end);
  return batch;
}

std::vector<DataShard> shard_iid(std::shared_ptr<const Dataset> data, int workers, std::uint64_t seed) {
  if (workers < 1) throw std::invalid_argument("shard_iid: need at least one worker");
  const Index n = data->size();
  if (n < workers) throw std::invalid_argument("shard_iid: fewer examples than workers");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  auto rng = keyed_rng({seed, 0x5a4dULL});
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<DataShard> shards;
  const Index base = n / workers;
  const Index extra = n % workers;
  Index begin = 0;
  for (int m = 0; m < workers; ++m) {
    const Index len = base + (m < extra ? 1 : 0);
    DataShard s;
    s.owner = m;
    s.data = data;
    s.rows.assign(perm.begin() + begin, perm.begin() + begin + len);
    std::sort(s.rows.begin(), s.rows.end());
    s.seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(m) + 1));
    shards.push_back(std::move(s));
    begin += len;
  }
  return shards;
}

LossGradient loss_and_gradient(const Task& task, const ParamVector& w, const Dataset& data,
                               std::span<const Index> rows) {
  check_dim(task, w);
  if (rows.empty()) throw std::invalid_argument("loss_and_gradient: empty row set");
  LossGradient out = task.kind == TaskKind::fc_net ? fc_loss_gradient(task, w, data, rows)
                                                   : per_example_mean(task, w, data, rows);
  require_finite_loss(out.loss);
  return out;
}

double loss_on_rows(const Task& task, const ParamVector& w, const Dataset& data, std::span<const Index> rows) {
  check_dim(task, w);
  if (rows.empty()) throw std::invalid_argument("loss_on_rows: empty row set");
  double value = 0.0;
  if (task.kind == TaskKind::fc_net) {
    const RowMatrix<double> x = gather_rows(data, rows);
    std::vector<int> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.labels[static_cast<std::size_t>(rows[i])];
    RowMatrix<double> logits = fc_forward(task, w, x, nullptr);
    value = softmax_xent(logits, labels);
  } else {
    ParamVector g;
    double l = 0.0;
    Index count = 0;
    for (Index row : rows) {
      if (task.kind == TaskKind::quadratic) {
        quadratic_example(task, w, data, row, l, g);
      } else {
        logistic_example(task, w, data, row, l, g);
      }
      ++count;
      value += (l - value) / static_cast<double>(count);
    }
  }
  require_finite_loss(value);
  return value;
}

namespace {
std::vector<Index> resolve(const Batch& batch, const DataShard& shard) {
  std::vector<Index> rows(batch.positions.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = shard.rows.at(static_cast<std::size_t>(batch.positions[i]));
  return rows;
}
}  // namespace

double loss(const Task& task, const ParamVector& w, const Batch& batch, const DataShard& shard) {
  return loss_on_rows(task, w, *shard.data, resolve(batch, shard));
}

ParamVector gradient(const Task& task, const ParamVector& w, const Batch& batch, const DataShard& shard) {
  return loss_and_gradient(task, w, *shard.data, resolve(batch, shard)).gradient;
}

LossGradient loss_and_gradient(const Task& task, const ParamVector& w, const Batch& batch,
                               const DataShard& shard) {
  return loss_and_gradient(task, w, *shard.data, resolve(batch, shard));
}

namespace {
constexpr Index kFullPassChunk = 1000;

// Chunked full pass in shard order; chunk results are merged as a weighted running mean.
LossGradient full_pass(const Task& task, const ParamVector& w, std::span<const DataShard> shards) {
  LossGradient out;
  out.gradient = ParamVector::Zero(task.dim);
  Index seen = 0;
  for (const auto& shard : shards) {
    for (Index begin = 0; begin < shard.size(); begin += kFullPassChunk) {
      const Index len = std::min(kFullPassChunk, shard.size() - begin);
      std::span<const Index> rows(shard.rows.data() + begin, static_cast<std::size_t>(len));
      const LossGradient part = loss_and_gradient(task, w, *shard.data, rows);
      seen += len;
      const double weight = static_cast<double>(len) / static_cast<double>(seen);
      out.loss += (part.loss - out.loss) * weight;
      for (Index i = 0; i < out.gradient.size(); ++i) out.gradient[i] += (part.gradient[i] - out.gradient[i]) * weight;
    }
  }
  return out;
}
}  // namespace

double full_loss(const Task& task, const ParamVector& w, std::span<const DataShard> shards) {
  double value = 0.0;
  Index seen = 0;
  for (const auto& shard : shards) {
    for (Index begin = 0; begin < shard.size(); begin += kFullPassChunk) {
      const Index len = std::min(kFullPassChunk, shard.size() - begin);
      std::span<const Index> rows(shard.rows.data() + begin, static_cast<std::size_t>(len));
      seen += len;
      value += (loss_on_rows(task, w, *shard.data, rows) - value) * (static_cast<double>(len) / static_cast<double>(seen));
    }
  }
  return value;
}

ParamVector full_gradient(const Task& task, const ParamVector& w, std::span<const DataShard> shards) {
  return full_pass(task, w, shards).gradient;
}

double full_gradient_norm(const Task& task, const ParamVector& w, std::span<const DataShard> shards) {
  return std::sqrt(sq_norm(full_gradient(task, w, shards)));
}

double accuracy(const Task& task, const ParamVector& w, const Dataset& data) {
  check_dim(task, w);
  if (data.size() == 0) return 0.0;
  Index correct = 0;
  if (task.kind == TaskKind::logistic) {
    for (Index i = 0; i < data.size(); ++i) {
      const bool predicted = dot(data.features.row(i).transpose(), w) > 0.0;
      if (predicted == (data.labels[static_cast<std::size_t>(i)] > 0)) ++correct;
    }
  } else if (task.kind == TaskKind::fc_net) {
    for (Index begin = 0; begin < data.size(); begin += kFullPassChunk) {
      const Index len = std::min(kFullPassChunk, data.size() - begin);
      const RowMatrix<double> logits = fc_forward(task, w, data.features.middleRows(begin, len), nullptr);
      for (Index i = 0; i < len; ++i) {
        Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        if (arg == data.labels[static_cast<std::size_t>(begin + i)]) ++correct;
      }
    }
  } else {
    throw std::invalid_argument("accuracy: quadratic tasks have no labels");
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

ParamVector init_params(const Task& task, std::uint64_t seed) {
  ParamVector w = ParamVector::Zero(task.dim);
  if (task.kind != TaskKind::fc_net) return w;
  auto rng = keyed_rng({seed, 0x1417ULL});
  for (const auto& v : fc_views(task)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(v.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < v.out * v.in; ++i) w[v.weight_offset + i] = u(rng);
    for (Index i = 0; i < v.out; ++i) w[v.bias_offset + i] = u(rng);
  }
  return w;
}

std::vector<DenseLayer> unflatten(const Task& task, const ParamVector& w) {
  check_dim(task, w);
  std::vector<DenseLayer> layers;
  for (const auto& v : fc_views(task)) {
    DenseLayer layer;
    layer.weight = ConstRowMap(w.data() + v.weight_offset, v.out, v.in);
    layer.bias = Eigen::Map<const Vector<double>>(w.data() + v.bias_offset, v.out);
    layers.push_back(std::move(layer));
  }
  return layers;
}

ParamVector flatten(const Task& task, const std::vector<DenseLayer>& layers) {
  const auto views = fc_views(task);
  if (views.size() != layers.size()) throw std::invalid_argument("flatten: layer count mismatch");
  ParamVector w(task.dim);
  for (std::size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    if (layers[l].weight.rows() != v.out || layers[l].weight.cols() != v.in || layers[l].bias.size() != v.out) {
      throw std::invalid_argument("flatten: layer shape mismatch");
    }
    RowMap(w.data() + v.weight_offset, v.out, v.in) = layers[l].weight;
    Eigen::Map<Vector<double>>(w.data() + v.bias_offset, v.out) = layers[l].bias;
  }
  return w;
}

QuadraticProblem make_quadratic_problem(Index examples, Index dim, Index rows, double noise, std::uint64_t seed) {
  auto rng = keyed_rng({seed, 0x9a11ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  QuadraticProblem p;
  p.task = make_quadratic_task(dim, rows);
  p.w_star.resize(dim);
  for (Index i = 0; i < dim; ++i) p.w_star[i] = normal(rng);

  auto data = std::make_shared<Dataset>();
  data->features.resize(examples, rows * dim);
  data->targets.resize(examples, rows);
  for (Index e = 0; e < examples; ++e) {
    for (Index j = 0; j < rows * dim; ++j) data->features(e, j) = normal(rng);
    ConstRowMap a(data->features.row(e).data(), rows, dim);
    Vector<double> b = a * p.w_star;
    for (Index r = 0; r < rows; ++r) data->targets(e, r) = b[r] + noise * normal(rng);
  }
  p.data = std::move(data);
  if (noise != 0.0) p.w_star = quadratic_minimizer(p.task, *p.data);
  return p;
}

QuadraticProblem make_identity_quadratic(Index dim, Index examples) {
  QuadraticProblem p;
  p.task = make_quadratic_task(dim, dim);
  auto data = std::make_shared<Dataset>();
  data->features = RowMatrix<double>::Zero(examples, dim * dim);
  data->targets = RowMatrix<double>::Zero(examples, dim);
  for (Index e = 0; e < examples; ++e) {
    for (Index i = 0; i < dim; ++i) data->features(e, i * dim + i) = 1.0;
  }
  p.data = std::move(data);
  p.w_star = ParamVector::Zero(dim);
  return p;
}

namespace {
void quadratic_normal_equations(const Task& task, const Dataset& data, Eigen::MatrixXd& h, Eigen::VectorXd& c) {
  if (task.kind != TaskKind::quadratic) throw std::invalid_argument("expected a quadratic task");
  h = Eigen::MatrixXd::Zero(task.dim, task.dim);
  c = Eigen::VectorXd::Zero(task.dim);
  for (Index e = 0; e < data.size(); ++e) {
    ConstRowMap a(data.features.row(e).data(), task.rows, task.dim);
    h.noalias() += a.transpose() * a;
    c.noalias() += a.transpose() * data.targets.row(e).transpose();
  }
  h /= static_cast<double>(data.size());
  c /= static_cast<double>(data.size());
}
}  // namespace

ParamVector quadratic_minimizer(const Task& task, const Dataset& data) {
  Eigen::MatrixXd h;
  Eigen::VectorXd c;
  quadratic_normal_equations(task, data, h, c);
  return h.ldlt().solve(c);
}

double quadratic_smoothness(const Task& task, const Dataset& data) {
  Eigen::MatrixXd h;
  Eigen::VectorXd c;
  quadratic_normal_equations(task, data, h, c);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff();
}

std::shared_ptr<Dataset> make_blobs(Index examples, Index features, int classes, double separation,
                                    std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("make_blobs: need at least two classes");
  auto rng = keyed_rng({seed, 0xb10bULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix<double> centres(classes, features);
  for (Index c = 0; c < classes; ++c) {
    for (Index j = 0; j < features; ++j) centres(c, j) = separation * normal(rng);
  }
  std::uniform_int_distribution<int> pick(0, classes - 1);
  auto data = std::make_shared<Dataset>();
  data->features.resize(examples, features);
  data->labels.resize(static_cast<std::size_t>(examples));
  for (Index e = 0; e < examples; ++e) {
    const int label = pick(rng);
    data->labels[static_cast<std::size_t>(e)] = label;
    for (Index j = 0; j < features; ++j) data->features(e, j) = centres(label, j) + normal(rng);
  }
  return data;
}

}  // namespace sasg
