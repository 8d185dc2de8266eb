#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fiml/tensor.hpp"

// Finite-difference and closed-form checks of the base learner and the
// meta-gradient. `fiml gradcheck` runs all of them.
namespace fiml::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  double worst = 0;       // worst observed error (meaning depends on the check)
  double threshold = 0;
  double seconds = 0;
  double time_limit = 0;  // 0 = none
  std::string detail;
};

struct SuiteConfig {
  std::uint64_t seed = 0;
  std::size_t draws = 50;            // grad_base and step-length draws
  std::size_t meta_draws = 3;        // episodes per meta-gradient batch
  std::size_t entropy_draws = 100;
  std::size_t hessian_draws = 50;
  std::size_t ridge_episodes = 20;
  std::size_t monotone_episodes = 500;
};

// Relative error ||a - b|| / max(||a||, ||b||, floor).
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

// Central differences of f at x, one tensor argument at a time.
std::vector<Tensor> finite_difference(const std::function<double(const std::vector<Tensor>&)>& f,
                                      std::vector<Tensor> x, double h);

CheckResult check_primitives(const SuiteConfig& config);
CheckResult check_grad_base(const SuiteConfig& config);
CheckResult check_meta_gradient(const SuiteConfig& config);
CheckResult check_ridge_oracle(const SuiteConfig& config);
CheckResult check_step_optimality(const SuiteConfig& config);
CheckResult check_entropy_identities(const SuiteConfig& config);
CheckResult check_hessian_oracles(const SuiteConfig& config);
CheckResult check_monotone_inductive(const SuiteConfig& config);
CheckResult check_monotone_transductive(const SuiteConfig& config);

std::vector<CheckResult> run_suite(const SuiteConfig& config);

std::string describe(const CheckResult& result);

}  // namespace fiml::verify
