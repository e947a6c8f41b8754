#include "sapl/optim.hpp"

#include <cmath>

namespace sapl {

AdamW::AdamW(std::vector<ag::Parameter*> params, Options opts) : params_(std::move(params)), opts_(opts) {
  for (auto* p : params_) {
    m_.push_back(ag::Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ag::Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    ag::Parameter& p = *params_[i];
    if (!p.trainable) continue;
    p.value *= 1.0 - opts_.lr * opts_.weight_decay;
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p.grad;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

double clip_grad_norm(const std::vector<ag::Parameter*>& params, double max_norm) {
  double sq = 0;
  for (auto* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (auto* p : params) p->grad *= s;
  }
  return norm;
}

}  // namespace sapl
