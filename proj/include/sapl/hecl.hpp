#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "sapl/autograd.hpp"
#include "sapl/backbone.hpp"

namespace sapl::hecl {

using ag::Index;
using ag::Matrix;
using ag::Parameter;
using ag::Tape;
using ag::Var;

enum class Polarity { pos, neg };

// Fixed-capacity FIFO of detached unit vectors.
class EmbeddingQueue {
 public:
  EmbeddingQueue(std::size_t capacity, Polarity polarity, int dim);

  // Each row is one entry; rows are renormalised before storage.
  void push(const Matrix& rows);
  // Entries as rows, oldest first.
  Matrix snapshot() const;
  void clear() { entries_.clear(); }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  Polarity polarity() const { return polarity_; }
  int dim() const { return dim_; }

 private:
  std::size_t capacity_;
  Polarity polarity_;
  int dim_;
  std::deque<Eigen::RowVectorXd> entries_;
};

struct ProjectionHead {
  int layer = 0;
  Parameter weight;  // joint x contrast, no bias

  Var forward(Tape& tape, const Var& x);
  Matrix forward(const Matrix& x) const;
};

ProjectionHead make_projection_head(int layer, int joint_dim, int contrast_dim, std::uint64_t seed);

struct SimilarityMaps {
  Matrix pos;  // G x G, cosine with the fake prompt
  Matrix neg;  // G x G, cosine with the real prompt
};

// features: (G*G) x J; text vectors need not be normalised.
SimilarityMaps similarity_map(const Matrix& features, int grid, const Matrix& t_pos, const Matrix& t_neg);
SimilarityMaps similarity_map(const backbone::PatchFeaturePyramid& pyramid, int layer, const Matrix& t_pos,
                              const Matrix& t_neg);

// Two-way softmax of logit_scale * cosine per cell: pos = P(fake), neg = 1 - pos.
SimilarityMaps confidence_maps(const SimilarityMaps& cosine, double logit_scale);

// Indices of the K largest scores, descending; ties go to the smaller index.
std::vector<Index> top_k(const Eigen::VectorXd& scores, int k);

struct SelectedEdgePatches {
  int layer = 0;
  std::vector<Index> pos_indices;
  std::vector<Index> neg_indices;
  std::vector<double> pos_weights;
  std::vector<double> neg_weights;
  Matrix positives;  // K x J
  Matrix negatives;  // K x J
};

// Grids are G x G, features (G*G) x J in row-major grid order.
SelectedEdgePatches select_edge_patches(const Matrix& sim_pos, const Matrix& sim_neg, const Matrix& edge,
                                        const Matrix& features, int k, int layer = 0);

// Per-vector loss against detached queues; nullopt when either queue is empty.
std::optional<double> contrastive_loss(const Eigen::RowVectorXd& z, const Matrix& own, const Matrix& other,
                                       double tau);
std::optional<double> contrastive_loss(const Eigen::RowVectorXd& z, const EmbeddingQueue& own,
                                       const EmbeddingQueue& other, double tau);
// Row-wise differentiable version: z is m x d, result m x 1.
Var contrastive_loss_rows(Tape& tape, const Var& z, const Matrix& own, const Matrix& other, double tau);

struct LayerSelection {
  Var positives;  // K x J, rows of the live layer features
  Var negatives;
  int layer = 0;
};

struct HeclOutput {
  Var loss;          // invalid when the loss was skipped
  Matrix z_to_pos;   // detached rows bound for queue_pos
  Matrix z_to_neg;   // detached rows bound for queue_neg
};

struct QueueSnapshot {
  Matrix pos;
  Matrix neg;
};

// label 1: z+ against (pos, neg), z- against (neg, pos); z+ -> queue_pos, z- -> queue_neg.
// label 0: both selections against (neg, pos) and both go to queue_neg.
// With compute_loss false only the projections are produced.
HeclOutput hecl_loss(Tape& tape, const std::vector<LayerSelection>& selections, std::map<int, ProjectionHead>& heads,
                     const QueueSnapshot& queues, double tau, int label, bool compute_loss = true);

}  // namespace sapl::hecl
