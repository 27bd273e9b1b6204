#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sasg/vecmath.hpp"

namespace sasg {

/// Examples stored row-wise. Quadratic tasks use `targets`; classifiers use `labels`.
struct Dataset {
  RowMatrix<double> features;
  RowMatrix<double> targets;
  std::vector<int> labels;

  Index size() const { return features.rows(); }
};

enum class TaskKind { quadratic, logistic, fc_net };

/// Loss family plus shape metadata. `dim` is the flattened parameter count.
///
/// quadratic: each example holds a rows x dim block A_i (row-major in its
///   feature row) and a target b_i; f_i(w) = 0.5 * ||A_i w - b_i||^2.
/// logistic: labels in {0, 1} mapped to y = -1/+1; f_i(w) = log(1 + exp(-y x_i.w))
///   plus an optional 0.5 * l2 * ||w||^2.
/// fc_net: sigmoid hidden layers, softmax cross-entropy output. Parameters are
///   laid out layer by layer as W (out x in, row-major) followed by the bias.
struct Task {
  TaskKind kind = TaskKind::quadratic;
  Index dim = 0;
  Index rows = 1;
  double l2 = 0.0;
  std::vector<Index> layers;
};

Task make_quadratic_task(Index dim, Index rows = 1);
Task make_logistic_task(Index dim, double l2 = 0.0);
Task make_fc_task(std::vector<Index> layers);

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

/// A worker's slice of the training set. Rows index into the shared dataset.
struct DataShard {
  int owner = 0;
  std::shared_ptr<const Dataset> data;
  std::vector<Index> rows;
  std::uint64_t seed = 0;

  Index size() const { return static_cast<Index>(rows.size()); }
};

/// Positions into the owning shard.
struct Batch {
  std::vector<Index> positions;

  Index size() const { return static_cast<Index>(positions.size()); }
  bool operator==(const Batch&) const = default;
};

enum class Sampling { with_replacement, without_replacement };

/// Deterministic in (shard.seed, t). With replacement: b uniform draws.
/// Without replacement: slice t of a per-epoch shuffle (epoch = t / ceil(n/b)).
Batch sample_batch(const DataShard& shard, std::int64_t t, Index b,
                   Sampling mode = Sampling::with_replacement);

Index iterations_per_epoch(Index shard_size, Index batch_size);

/// IID split: shuffled, then contiguous chunks whose sizes differ by at most one.
std::vector<DataShard> shard_iid(std::shared_ptr<const Dataset> data, int workers, std::uint64_t seed);

struct LossGradient {
  double loss = 0.0;
  ParamVector gradient;
};

/// Mean loss and gradient over the given dataset rows.
LossGradient loss_and_gradient(const Task& task, const ParamVector& w, const Dataset& data,
                               std::span<const Index> rows);
double loss_on_rows(const Task& task, const ParamVector& w, const Dataset& data, std::span<const Index> rows);

/// Throws std::runtime_error on a non-finite loss.
double loss(const Task& task, const ParamVector& w, const Batch& batch, const DataShard& shard);
ParamVector gradient(const Task& task, const ParamVector& w, const Batch& batch, const DataShard& shard);
LossGradient loss_and_gradient(const Task& task, const ParamVector& w, const Batch& batch,
                               const DataShard& shard);

/// Full-data objective F(w) = mean over every example held by the shards.
double full_loss(const Task& task, const ParamVector& w, std::span<const DataShard> shards);
ParamVector full_gradient(const Task& task, const ParamVector& w, std::span<const DataShard> shards);
double full_gradient_norm(const Task& task, const ParamVector& w, std::span<const DataShard> shards);

/// Fraction of correctly classified rows (logistic: sign, fc_net: argmax).
double accuracy(const Task& task, const ParamVector& w, const Dataset& data);

/// fc_net: PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); others: zeros.
ParamVector init_params(const Task& task, std::uint64_t seed);

/// Dense per-layer copies of an fc_net parameter vector, and the inverse.
struct DenseLayer {
  RowMatrix<double> weight;
  Vector<double> bias;
};
std::vector<DenseLayer> unflatten(const Task& task, const ParamVector& w);
ParamVector flatten(const Task& task, const std::vector<DenseLayer>& layers);

// --- synthetic data ---

struct QuadraticProblem {
  std::shared_ptr<const Dataset> data;
  Task task;
  ParamVector w_star;
};

/// Gaussian design with targets b_i = A_i w* + noise * N(0, 1). With noise = 0
/// every per-example gradient vanishes at w*.
QuadraticProblem make_quadratic_problem(Index examples, Index dim, Index rows, double noise, std::uint64_t seed);

/// `examples` copies of A = I, b = 0: gradient(w) = w on any batch.
QuadraticProblem make_identity_quadratic(Index dim, Index examples = 1);

/// Minimizer of the full quadratic objective and its smoothness constant
/// (largest eigenvalue of mean A_i^T A_i).
ParamVector quadratic_minimizer(const Task& task, const Dataset& data);
double quadratic_smoothness(const Task& task, const Dataset& data);

/// Isotropic Gaussian clusters with centres drawn at `separation` scale.
std::shared_ptr<Dataset> make_blobs(Index examples, Index features, int classes, double separation,
                                    std::uint64_t seed);

// --- IDX (MNIST) ---

/// Images scaled to [0, 1]; labels 0-9. Errors name the file and byte offset.
std::shared_ptr<Dataset> load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace sasg
