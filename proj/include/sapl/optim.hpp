#pragma once

#include <vector>

#include "sapl/autograd.hpp"

namespace sapl {

// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<ag::Parameter*> params, Options opts);

  void step();
  void zero_grad();
  long steps() const { return t_; }
  const Options& options() const { return opts_; }

 private:
  std::vector<ag::Parameter*> params_;
  std::vector<ag::Matrix> m_, v_;
  Options opts_;
  long t_ = 0;
};

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(const std::vector<ag::Parameter*>& params, double max_norm);

}  // namespace sapl
