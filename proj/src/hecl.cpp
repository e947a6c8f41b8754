#include "sapl/hecl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sapl/rng.hpp"

namespace sapl::hecl {

EmbeddingQueue::EmbeddingQueue(std::size_t capacity, Polarity polarity, int dim)
    : capacity_(capacity), polarity_(polarity), dim_(dim) {
  if (capacity == 0) throw std::invalid_argument("queue capacity must be positive");
  if (dim < 1) throw std::invalid_argument("queue dimension must be positive");
}

void EmbeddingQueue::push(const Matrix& rows) {
  if (rows.size() == 0) return;
  if (rows.cols() != dim_) throw std::invalid_argument("queue entry dimension mismatch");
  for (Index r = 0; r < rows.rows(); ++r) {
    Eigen::RowVectorXd v = rows.row(r);
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("queue entries must be finite and nonzero");
    entries_.push_back(v / n);
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

Matrix EmbeddingQueue::snapshot() const {
  Matrix m(Index(entries_.size()), dim_);
  for (std::size_t i = 0; i < entries_.size(); ++i) m.row(Index(i)) = entries_[i];
  return m;
}

Var ProjectionHead::forward(Tape& tape, const Var& x) {
  return ag::l2_normalize_rows(ag::matmul(x, tape.param(weight)));
}

Matrix ProjectionHead::forward(const Matrix& x) const {
  Matrix y = x * weight.value;
  for (Index r = 0; r < y.rows(); ++r) {
    const double n = y.row(r).norm();
    if (n > 0) y.row(r) /= n;
  }
  return y;
}

ProjectionHead make_projection_head(int layer, int joint_dim, int contrast_dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(joint_dim, contrast_dim);
  const double s = 1.0 / std::sqrt(double(joint_dim));
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, s);
  return ProjectionHead{layer, Parameter("hecl.head" + std::to_string(layer) + ".weight", std::move(w))};
}

namespace {

Eigen::VectorXd cosine_column(const Matrix& features, const Matrix& t) {
  if (t.size() != features.cols()) throw std::invalid_argument("text feature dimension mismatch");
  Eigen::RowVectorXd tv = Eigen::Map<const Eigen::RowVectorXd>(t.data(), t.size());
  const double tn = tv.norm();
  Eigen::VectorXd out(features.rows());
  for (Index i = 0; i < features.rows(); ++i) {
    const double fn = features.row(i).norm();
    out(i) = (fn > 0 && tn > 0) ? features.row(i).dot(tv) / (fn * tn) : 0.0;
  }
  return out;
}

Matrix as_grid(const Eigen::VectorXd& v, int grid) {
  return Eigen::Map<const Matrix>(v.data(), grid, grid);
}

}  // namespace

SimilarityMaps similarity_map(const Matrix& features, int grid, const Matrix& t_pos, const Matrix& t_neg) {
  if (features.rows() != Index(grid) * grid) throw std::invalid_argument("feature rows do not match grid");
  return {as_grid(cosine_column(features, t_pos), grid), as_grid(cosine_column(features, t_neg), grid)};
}

SimilarityMaps similarity_map(const backbone::PatchFeaturePyramid& pyramid, int layer, const Matrix& t_pos,
                              const Matrix& t_neg) {
  auto it = pyramid.per_layer.find(layer);
  if (it == pyramid.per_layer.end()) throw backbone::LayerSelectionError("layer not in pyramid: " + std::to_string(layer));
  return similarity_map(it->second, pyramid.grid, t_pos, t_neg);
}

SimilarityMaps confidence_maps(const SimilarityMaps& cosine, double logit_scale) {
  SimilarityMaps out;
  out.pos = (logit_scale * (cosine.pos - cosine.neg)).unaryExpr([](double d) { return 1.0 / (1.0 + std::exp(-d)); });
  out.neg = (1.0 - out.pos.array()).matrix();
  return out;
}

std::vector<Index> top_k(const Eigen::VectorXd& scores, int k) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  std::vector<Index> idx(scores.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  const auto n = std::min<std::size_t>(std::size_t(k), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + n, idx.end(), [&](Index a, Index b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  idx.resize(n);
  return idx;
}

SelectedEdgePatches select_edge_patches(const Matrix& sim_pos, const Matrix& sim_neg, const Matrix& edge,
                                        const Matrix& features, int k, int layer) {
  if (sim_pos.rows() != sim_neg.rows() || sim_pos.cols() != sim_neg.cols() || edge.size() != sim_pos.size())
    throw std::invalid_argument("similarity grids and edge map must share shape");
  if (features.rows() != sim_pos.size()) throw std::invalid_argument("feature rows do not match grid");
  const Index n = sim_pos.size();
  Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(edge.data(), n);
  Eigen::VectorXd wp = Eigen::Map<const Eigen::VectorXd>(sim_pos.data(), n).cwiseProduct(e);
  Eigen::VectorXd wn = Eigen::Map<const Eigen::VectorXd>(sim_neg.data(), n).cwiseProduct(e);
  SelectedEdgePatches s;
  s.layer = layer;
  s.pos_indices = top_k(wp, k);
  s.neg_indices = top_k(wn, k);
  s.positives.resize(Index(s.pos_indices.size()), features.cols());
  s.negatives.resize(Index(s.neg_indices.size()), features.cols());
  for (std::size_t i = 0; i < s.pos_indices.size(); ++i) {
    s.positives.row(Index(i)) = features.row(s.pos_indices[i]);
    s.pos_weights.push_back(wp(s.pos_indices[i]));
  }
  for (std::size_t i = 0; i < s.neg_indices.size(); ++i) {
    s.negatives.row(Index(i)) = features.row(s.neg_indices[i]);
    s.neg_weights.push_back(wn(s.neg_indices[i]));
  }
  return s;
}

std::optional<double> contrastive_loss(const Eigen::RowVectorXd& z, const Matrix& own, const Matrix& other,
                                       double tau) {
  if (!(tau > 0)) throw std::invalid_argument("temperature must be positive");
  if (own.rows() == 0 || other.rows() == 0) return std::nullopt;
  const Eigen::VectorXd s_own = own * z.transpose();
  const Eigen::VectorXd s_other = other * z.transpose();
  const double key = s_own.maxCoeff() / tau;
  const double m = std::max(key, s_other.maxCoeff() / tau);
  double acc = std::exp(key - m);
  for (Index j = 0; j < s_other.size(); ++j) acc += std::exp(s_other(j) / tau - m);
  return std::max(0.0, m + std::log(acc) - key);
}

std::optional<double> contrastive_loss(const Eigen::RowVectorXd& z, const EmbeddingQueue& own,
                                       const EmbeddingQueue& other, double tau) {
  return contrastive_loss(z, own.snapshot(), other.snapshot(), tau);
}

Var contrastive_loss_rows(Tape& tape, const Var& z, const Matrix& own, const Matrix& other, double tau) {
  using namespace ag;
  if (!(tau > 0)) throw std::invalid_argument("temperature must be positive");
  if (own.rows() == 0 || other.rows() == 0) throw std::invalid_argument("contrastive loss needs nonempty queues");
  const Matrix& zv = z.value();
  const Matrix s_own = zv * own.transpose();
  Matrix keys(zv.rows(), zv.cols());
  for (Index r = 0; r < zv.rows(); ++r) {
    Index best = 0;
    s_own.row(r).maxCoeff(&best);
    keys.row(r) = own.row(best);
  }
  Var s_key = matmul(hadamard(z, tape.constant(std::move(keys))), tape.constant(Matrix::Ones(zv.cols(), 1)));
  Var s_other = matmul_nt(z, tape.constant(other));
  const Var parts[] = {s_key, s_other};
  Var lse = logsumexp_rows(scale(concat_cols(parts), 1.0 / tau));
  return sub(lse, scale(s_key, 1.0 / tau));
}

HeclOutput hecl_loss(Tape& tape, const std::vector<LayerSelection>& selections, std::map<int, ProjectionHead>& heads,
                     const QueueSnapshot& queues, double tau, int label, bool compute_loss) {
  using namespace ag;
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
  HeclOutput out;
  if (selections.empty()) return out;
  std::vector<Var> terms;
  std::vector<Matrix> to_pos, to_neg;
  for (const LayerSelection& sel : selections) {
    auto it = heads.find(sel.layer);
    if (it == heads.end()) throw backbone::LayerSelectionError("no projection head for layer " + std::to_string(sel.layer));
    Var zp = it->second.forward(tape, sel.positives);
    Var zn = it->second.forward(tape, sel.negatives);
    const Matrix& own_p = label == 1 ? queues.pos : queues.neg;
    const Matrix& other_p = label == 1 ? queues.neg : queues.pos;
    if (compute_loss) {
      Var lp = mean_all(contrastive_loss_rows(tape, zp, own_p, other_p, tau));
      Var ln = mean_all(contrastive_loss_rows(tape, zn, queues.neg, queues.pos, tau));
      terms.push_back(add(lp, ln));
    }
    (label == 1 ? to_pos : to_neg).push_back(zp.value());
    to_neg.push_back(zn.value());
  }
  auto stack = [](const std::vector<Matrix>& ms) {
    Index rows = 0;
    for (const auto& m : ms) rows += m.rows();
    Matrix out(rows, ms.empty() ? 0 : ms[0].cols());
    Index r = 0;
    for (const auto& m : ms) {
      out.middleRows(r, m.rows()) = m;
      r += m.rows();
    }
    return out;
  };
  out.z_to_pos = stack(to_pos);
  out.z_to_neg = stack(to_neg);
  if (compute_loss) out.loss = scale(add_n(terms), 1.0 / double(terms.size()));
  return out;
}

}  // namespace sapl::hecl
