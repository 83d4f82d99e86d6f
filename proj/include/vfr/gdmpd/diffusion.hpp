#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vfr/dataio/image.hpp"
#include "vfr/fedsim/simulation.hpp"
#include "vfr/numcore/autodiff.hpp"
#include "vfr/numcore/tensor.hpp"
#include "vfr/rng.hpp"
#include "vfr/vision/extractor.hpp"

namespace vfr {

// Steps are 1-based throughout: beta(1) .. beta(T).
struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(std::size_t t) const { return betas.at(t - 1); }
  double alpha(std::size_t t) const { return alphas.at(t - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bars.at(t - 1); }
  void check_step(std::size_t t) const;
};

// beta_t = beta1 + (t-1)/(T-1) * (betaT - beta1).
NoiseSchedule build_schedule(std::size_t T, double beta1 = 1e-4, double betaT = 2e-2);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) zeta.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& zeta, const NoiseSchedule& schedule);

Tensor standard_normal(Rng& rng, const Shape& shape);

// Noise-prediction network eps_w(x_t, t): three 3x3 convolutions (3 -> 16 ->
// 16 -> 3) with leaky rectifiers; a sinusoidal step embedding, linearly
// projected, is added to every hidden channel.
class Denoiser {
 public:
  static constexpr std::size_t kChannels = 16;
  static constexpr std::size_t kEmbedDim = 16;

  Denoiser() = default;
  explicit Denoiser(std::uint64_t seed);

  Var forward(Graph& graph, Var x, std::size_t t, const std::vector<Var>& weights) const;
  Tensor predict(const Tensor& x, std::size_t t) const;

  std::vector<Tensor>& weights() { return weights_; }
  const std::vector<Tensor>& weights() const { return weights_; }

  friend bool operator==(const Denoiser&, const Denoiser&) = default;

 private:
  // conv1 w/b, conv2 w/b, conv3 w/b, step projection [embed x channels].
  std::vector<Tensor> weights_;
};

Tensor step_embedding(std::size_t t, std::size_t dim);

struct DenoiserTraining {
  Denoiser denoiser;
  std::vector<double> losses;  // per step
};

// Adam (lr 1e-3) on mean squared noise-prediction error, one image per step.
DenoiserTraining train_denoiser(const std::vector<Tensor>& images, const NoiseSchedule& schedule,
                                std::size_t steps, std::uint64_t seed, double lr = 1e-3);

// Mean squared noise-prediction error averaged over `samples` random draws.
double denoiser_loss(const Denoiser& denoiser, const std::vector<Tensor>& images,
                     const NoiseSchedule& schedule, std::size_t samples, std::uint64_t seed,
                     std::optional<std::size_t> fixed_step = std::nullopt);

// "GDM1", u32 tensor count, then per tensor: u32 rank, u64 dims, doubles.
void save_denoiser(const Denoiser& denoiser, std::ostream& out);
void save_denoiser(const Denoiser& denoiser, const std::filesystem::path& path);
Denoiser load_denoiser(std::istream& in);
Denoiser load_denoiser(const std::filesystem::path& path);

// (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t).
Tensor reverse_mean_from_eps(const Tensor& x_t, const Tensor& eps, std::size_t t,
                             const NoiseSchedule& schedule);
Tensor reverse_mean(const Denoiser& denoiser, const Tensor& x_t, std::size_t t,
                    const NoiseSchedule& schedule);

// -lambda * Sigma * grad MSE(x_t, xhat_t) = -lambda * Sigma * 2 (xhat_t - x_t) / N,
// which moves the mean toward the guidance target.
Tensor guidance_shift(const Tensor& xhat_t, const Tensor& guide, double lambda, double sigma);

// One reverse step: mean plus guidance shift, plus sqrt(Sigma) noise for t > 1.
Tensor guided_step(const Denoiser& denoiser, const Tensor& xhat_t, const Tensor& guide,
                   std::size_t t, double lambda, const NoiseSchedule& schedule, Rng& rng);

struct PurifyTrace {
  std::vector<Tensor> diffused;  // x_1 .. x_T
  std::vector<Tensor> zetas;
  std::uint64_t seed = 0;
};

PurifyTrace diffuse_trajectory(const Tensor& x0, const NoiseSchedule& schedule, std::uint64_t seed);

struct PurifyResult {
  Tensor purified;  // clipped to [-1, 1]
  std::vector<std::uint8_t> pixels;
  PurifyTrace trace;
};

PurifyResult purify(const Tensor& x0, const Denoiser& denoiser, const NoiseSchedule& schedule,
                    double lambda, std::uint64_t seed, bool keep_trace = false);

// cos(a, b); nullopt when either vector is zero.
std::optional<double> cosine_similarity(const Tensor& a, const Tensor& b);

struct DetectorCalibration {
  double rho = 0.0;
  std::vector<double> similarities;
};

struct Verdict {
  bool adversarial = false;
  double similarity = 0.0;
  bool zero_feature = false;
  std::vector<std::uint8_t> purified_pixels;
};

// Similarity between an image's features and those of its purified (and
// re-quantized) twin.
Verdict detect(const ImageAsset& image, const Denoiser& denoiser, const NoiseSchedule& schedule,
               const Extractor& extractor, double rho, double lambda, std::uint64_t seed);

// rho = minimum similarity over a clean corpus; image i is purified with
// derive_seed(seed, "calibrate", i).
DetectorCalibration calibrate_rho(const Denoiser& denoiser, const NoiseSchedule& schedule,
                                  const std::vector<ImageAsset>& clean_corpus,
                                  const Extractor& extractor, double lambda, std::uint64_t seed);

// The server-side defense: every upload is replaced by its purified version
// and a verdict is logged. Results are cached by (pixels, seed).
class GdmpdDefense : public ImageDefense {
 public:
  GdmpdDefense(const Denoiser& denoiser, NoiseSchedule schedule, const Extractor& extractor,
               double rho, double lambda, std::uint64_t seed);

  std::string name() const override { return "gdmpd"; }
  ScreenResult screen(const ImageAsset& upload, std::size_t epoch) override;

  double rho() const { return rho_; }

 private:
  const Denoiser& denoiser_;
  NoiseSchedule schedule_;
  const Extractor& extractor_;
  double rho_;
  double lambda_;
  std::uint64_t seed_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, Verdict> cache_;
};

void write_calibration_csv(std::ostream& out, const DetectorCalibration& calibration);

}  // namespace vfr
