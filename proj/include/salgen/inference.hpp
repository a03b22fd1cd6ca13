#pragma once

// Latent-variable inference: unadjusted Langevin dynamics on the log-joint
//   log p(y, h | x) = -||y - g(f(x,h))||^2 / (2 sigma2) - ||h||^2 / 2
// with g = sigmoid (logit models) or identity, plus prior sampling and
// predictive uncertainty.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "salgen/rng.hpp"
#include "salgen/tensor.hpp"

namespace salgen {

struct LangevinConfig {
  double step_size = 0.1;
  double sigma2 = 0.3;
  int steps = 5;
  double divergence_threshold = 1e3;
  bool record_trajectory = false;
  void validate() const;
};

enum class Link { sigmoid, identity };

/// Maps latents h [N,K] to model outputs with the shape of y. Row n of the
/// output must depend on row n of h only.
using LatentModel = std::function<Tensor(const Tensor& h)>;

struct TrajectoryPoint {
  int step;
  double log_joint;
  double h_norm;
};

struct LatentState {
  Tensor h;                                              // [N,K]
  std::vector<std::vector<TrajectoryPoint>> trajectory;  // per chain, when recorded
  std::vector<bool> diverged;                            // per chain
  std::vector<std::uint64_t> seeds;                      // per chain
  bool any_diverged() const;
};

class LangevinError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-chain log-joint values [N] (no graph).
std::vector<double> log_joint(const LatentModel& model, const Tensor& y, const Tensor& h, double sigma2,
                              Link link = Link::sigmoid, const Tensor& mask = Tensor());

/// Gradient of the summed log-joint w.r.t. h, one backward pass. Per-chain
/// values are written to values_out when given. Throws LangevinError on a
/// non-finite gradient.
Tensor log_joint_grad(const LatentModel& model, const Tensor& y, const Tensor& h, double sigma2,
                      Link link = Link::sigmoid, const Tensor& mask = Tensor(),
                      std::vector<double>* values_out = nullptr);

/// Runs one independent chain per row. rngs[n] supplies h_0 (when h0 is
/// undefined) and the injected noise of chain n. A chain whose |h| exceeds
/// the divergence threshold stops and is flagged; the others continue.
LatentState langevin_infer(const LatentModel& model, const Tensor& y, const LangevinConfig& cfg, std::vector<Rng>& rngs,
                           int latent_dim, const Tensor& h0 = Tensor(), Link link = Link::sigmoid,
                           const Tensor& mask = Tensor());

/// Line-delimited records {"chain","step","log_joint","h_norm","diverged"}.
void dump_trajectory(const LatentState& state, std::ostream& os);

/// i.i.d. standard normal [rows, K].
Tensor sample_prior(int latent_dim, Rng& rng, std::int64_t rows = 1);

struct Uncertainty {
  Tensor mean;     // mean predicted probability
  Tensor entropy;  // binary entropy of the mean, in [0, ln 2]
};

/// Binary entropy with p clamped to [1e-7, 1 - 1e-7].
Tensor binary_entropy(const Tensor& p);

/// Averages sigmoid(model(h_i)) over n prior draws h_i of shape [rows, K],
/// then takes the entropy of the mean.
Uncertainty predictive_uncertainty(const LatentModel& model, int latent_dim, std::int64_t rows, int n_samples,
                                   Rng& rng);

/// Mean of maps computed as m_0 + sum(m_i - m_0) / n, so identical maps give back m_0 exactly.
std::vector<double> stable_mean(const std::vector<std::vector<double>>& maps);

}  // namespace salgen
