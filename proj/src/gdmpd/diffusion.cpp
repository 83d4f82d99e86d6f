#include "vfr/gdmpd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string_view>

#include "vfr/errors.hpp"
#include "vfr/numcore/optim.hpp"

namespace vfr {

namespace {

constexpr double kLeak = 0.1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CorruptCheckpoint("denoiser checkpoint truncated");
  }
  return v;
}

Tensor he_normal(Rng& rng, const Shape& shape, std::size_t fan_in, double gain = 1.0) {
  Tensor t(shape);
  const double sd = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

// Same-size 3x3 convolution with zero padding, plus per-channel offset.
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, const double* extra) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), O = w.dim(0);
  Tensor out(Shape{O, H, W});
  for (std::size_t o = 0; o < O; ++o) {
    double* dst = out.data() + o * H * W;
    const double offset = b[o] + (extra != nullptr ? extra[o] : 0.0);
    std::fill(dst, dst + H * W, offset);
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = x.data() + c * H * W;
      const double* k = w.data() + (o * C + c) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double kv = k[ky * 3 + kx];
          // output (i, j) reads input (i + ky - 1, j + kx - 1)
          const std::size_t i0 = ky == 0 ? 1 : 0, i1 = ky == 2 ? H - 1 : H;
          const std::size_t j0 = kx == 0 ? 1 : 0, j1 = kx == 2 ? W - 1 : W;
          for (std::size_t i = i0; i < i1; ++i) {
            const double* row = src + (i + ky - 1) * W + (kx - 1);
            double* d = dst + i * W;
            for (std::size_t j = j0; j < j1; ++j) d[j] += kv * row[j];
          }
        }
      }
    }
  }
  return out;
}

void leaky_inplace(Tensor& t) {
  for (double& v : t.values()) v = v > 0 ? v : kLeak * v;
}

std::uint64_t pixel_hash(const ImageAsset& img) {
  std::string_view bytes(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return mix64(hash_tag(bytes) ^ (img.height << 20) ^ img.width);
}

}  // namespace

// ---- schedule -------------------------------------------------------------

void NoiseSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > T) {
    throw StepOutOfRange("step " + std::to_string(t) + " outside 1.." + std::to_string(T));
  }
}

NoiseSchedule build_schedule(std::size_t T, double beta1, double betaT) {
  if (T < 2 || !(beta1 > 0.0) || !(beta1 < betaT) || !(betaT < 1.0)) {
    throw InvalidScheduleBounds("need T >= 2 and 0 < beta1 < betaT < 1");
  }
  NoiseSchedule s;
  s.T = T;
  double abar = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double beta = t == T ? betaT
                               : beta1 + static_cast<double>(t - 1) / static_cast<double>(T - 1) *
                                             (betaT - beta1);
    abar *= 1.0 - beta;
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    s.alpha_bars.push_back(abar);
  }
  return s;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& zeta, const NoiseSchedule& schedule) {
  schedule.check_step(t);
  require_same_shape(x0, zeta, "q_sample");
  const double a = std::sqrt(schedule.alpha_bar(t));
  const double s = std::sqrt(1.0 - schedule.alpha_bar(t));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * zeta[i];
  return out;
}

Tensor standard_normal(Rng& rng, const Shape& shape) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

// ---- denoiser -------------------------------------------------------------

Tensor step_embedding(std::size_t t, std::size_t dim) {
  Tensor e(Shape{dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(t) * freq);
    e[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

Denoiser::Denoiser(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "denoiser_init"));
  constexpr std::size_t C = kChannels;
  weights_.push_back(he_normal(rng, {C, 3, 3, 3}, 27));
  weights_.emplace_back(Shape{C});
  weights_.push_back(he_normal(rng, {C, C, 3, 3}, C * 9));
  weights_.emplace_back(Shape{C});
  // Small output layer so the untrained net predicts almost zero noise.
  weights_.push_back(he_normal(rng, {3, C, 3, 3}, C * 9, 0.01));
  weights_.emplace_back(Shape{3});
  weights_.push_back(he_normal(rng, {kEmbedDim, C}, kEmbedDim, 0.5));
}

Var Denoiser::forward(Graph& graph, Var x, std::size_t t, const std::vector<Var>& w) const {
  Var emb = graph.constant(step_embedding(t, kEmbedDim).reshaped({1, kEmbedDim}));
  Var proj = reshape(matmul(emb, w[6]), {kChannels});
  Var h = conv2d(x, w[0], 1, 1);
  h = leaky_relu(add_channel_bias(add_channel_bias(h, w[1]), proj), kLeak);
  h = conv2d(h, w[2], 1, 1);
  h = leaky_relu(add_channel_bias(add_channel_bias(h, w[3]), proj), kLeak);
  return add_channel_bias(conv2d(h, w[4], 1, 1), w[5]);
}

Tensor Denoiser::predict(const Tensor& x, std::size_t t) const {
  if (x.rank() != 3 || x.dim(0) != 3) throw ShapeMismatch("denoiser expects [3, H, W]");
  const Tensor emb = step_embedding(t, kEmbedDim);
  std::vector<double> proj(kChannels, 0.0);
  for (std::size_t i = 0; i < kEmbedDim; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) proj[c] += emb[i] * weights_[6].at(i, c);
  }
  Tensor h = conv3x3(x, weights_[0], weights_[1], proj.data());
  leaky_inplace(h);
  h = conv3x3(h, weights_[2], weights_[3], proj.data());
  leaky_inplace(h);
  return conv3x3(h, weights_[4], weights_[5], nullptr);
}

DenoiserTraining train_denoiser(const std::vector<Tensor>& images, const NoiseSchedule& schedule,
                                std::size_t steps, std::uint64_t seed, double lr) {
  if (images.empty()) throw EmptyCorpus("denoiser training corpus is empty");
  DenoiserTraining out{Denoiser(seed), {}};
  auto& weights = out.denoiser.weights();
  std::vector<AdamState> states;
  for (const auto& w : weights) states.push_back(AdamState::for_param(w, AdamConfig{lr}));
  Rng rng(derive_seed(seed, "denoiser_train"));
  out.losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor& x0 = images[rng.below(images.size())];
    const std::size_t t = 1 + rng.below(schedule.T);
    const Tensor zeta = standard_normal(rng, x0.shape());
    Graph g;
    std::vector<Var> params;
    for (const auto& w : weights) params.push_back(g.parameter(w));
    Var xt = g.constant(q_sample(x0, t, zeta, schedule));
    Var loss = mse_loss(out.denoiser.forward(g, xt, t, params), g.constant(zeta));
    out.losses.push_back(loss.value().item());
    Gradients grads = backward(g, loss);
    for (std::size_t i = 0; i < weights.size(); ++i) adam_step(weights[i], grads[params[i]], states[i]);
  }
  return out;
}

double denoiser_loss(const Denoiser& denoiser, const std::vector<Tensor>& images,
                     const NoiseSchedule& schedule, std::size_t samples, std::uint64_t seed,
                     std::optional<std::size_t> fixed_step) {
  if (images.empty()) throw EmptyCorpus("no images to evaluate");
  Rng rng(derive_seed(seed, "denoiser_eval"));
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const Tensor& x0 = images[rng.below(images.size())];
    const std::size_t t = fixed_step ? *fixed_step : 1 + rng.below(schedule.T);
    const Tensor zeta = standard_normal(rng, x0.shape());
    const Tensor eps = denoiser.predict(q_sample(x0, t, zeta, schedule), t);
    double se = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) se += (eps[i] - zeta[i]) * (eps[i] - zeta[i]);
    total += se / static_cast<double>(eps.size());
  }
  return total / static_cast<double>(samples);
}

void save_denoiser(const Denoiser& denoiser, std::ostream& out) {
  out.write("GDM1", 4);
  const auto& ws = denoiser.weights();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ws.size()));
  for (const Tensor& t : ws) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

void save_denoiser(const Denoiser& denoiser, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  save_denoiser(denoiser, out);
}

Denoiser load_denoiser(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "GDM1", 4) != 0) {
    throw CorruptCheckpoint("missing GDM1 header");
  }
  const Denoiser reference(0);
  const auto count = get<std::uint32_t>(in);
  if (count != reference.weights().size()) throw CorruptCheckpoint("unexpected tensor count");
  Denoiser d;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = get<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t k = 0; k < rank && k < 8; ++k) shape.push_back(get<std::uint64_t>(in));
    if (shape != reference.weights()[i].shape()) throw CorruptCheckpoint("unexpected tensor shape");
    std::vector<double> values(shape_size(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw CorruptCheckpoint("denoiser checkpoint truncated");
    }
    d.weights().emplace_back(std::move(shape), std::move(values));
  }
  return d;
}

Denoiser load_denoiser(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return load_denoiser(in);
}

// ---- reverse process ------------------------------------------------------

Tensor reverse_mean_from_eps(const Tensor& x_t, const Tensor& eps, std::size_t t,
                             const NoiseSchedule& schedule) {
  schedule.check_step(t);
  require_same_shape(x_t, eps, "reverse_mean");
  const double c = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double inv = 1.0 / std::sqrt(schedule.alpha(t));
  Tensor mu(x_t.shape());
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = inv * (x_t[i] - c * eps[i]);
  return mu;
}

Tensor reverse_mean(const Denoiser& denoiser, const Tensor& x_t, std::size_t t,
                    const NoiseSchedule& schedule) {
  schedule.check_step(t);
  return reverse_mean_from_eps(x_t, denoiser.predict(x_t, t), t, schedule);
}

Tensor guidance_shift(const Tensor& xhat_t, const Tensor& guide, double lambda, double sigma) {
  require_same_shape(xhat_t, guide, "guidance_shift");
  const double k = -lambda * sigma * 2.0 / static_cast<double>(xhat_t.size());
  Tensor shift(xhat_t.shape());
  for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = k * (xhat_t[i] - guide[i]);
  return shift;
}

Tensor guided_step(const Denoiser& denoiser, const Tensor& xhat_t, const Tensor& guide,
                   std::size_t t, double lambda, const NoiseSchedule& schedule, Rng& rng) {
  schedule.check_step(t);
  const double sigma = schedule.beta(t);
  Tensor next = reverse_mean(denoiser, xhat_t, t, schedule);
  next += guidance_shift(xhat_t, guide, lambda, sigma);
  if (t > 1) {
    const double sd = std::sqrt(sigma);
    for (double& v : next.values()) v += sd * rng.normal();
  }
  return next;
}

PurifyTrace diffuse_trajectory(const Tensor& x0, const NoiseSchedule& schedule, std::uint64_t seed) {
  PurifyTrace trace;
  trace.seed = seed;
  Rng rng(derive_seed(seed, "diffuse"));
  trace.diffused.reserve(schedule.T);
  trace.zetas.reserve(schedule.T);
  for (std::size_t t = 1; t <= schedule.T; ++t) {
    trace.zetas.push_back(standard_normal(rng, x0.shape()));
    trace.diffused.push_back(q_sample(x0, t, trace.zetas.back(), schedule));
  }
  return trace;
}

PurifyResult purify(const Tensor& x0, const Denoiser& denoiser, const NoiseSchedule& schedule,
                    double lambda, std::uint64_t seed, bool keep_trace) {
  PurifyTrace trace = diffuse_trajectory(x0, schedule, seed);
  Rng rng(derive_seed(seed, "reverse"));
  Tensor xhat = trace.diffused.back();
  for (std::size_t t = schedule.T; t >= 1; --t) {
    xhat = guided_step(denoiser, xhat, trace.diffused[t - 1], t, lambda, schedule, rng);
  }
  for (double& v : xhat.values()) v = std::clamp(v, -1.0, 1.0);
  PurifyResult out;
  out.pixels = ImageAsset::quantize(xhat);
  out.purified = std::move(xhat);
  if (keep_trace) out.trace = std::move(trace);
  return out;
}

// ---- detection ------------------------------------------------------------

std::optional<double> cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_similarity");
  const double na = l2_norm(a.values()), nb = l2_norm(b.values());
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return dot(a.values(), b.values()) / (na * nb);
}

Verdict detect(const ImageAsset& image, const Denoiser& denoiser, const NoiseSchedule& schedule,
               const Extractor& extractor, double rho, double lambda, std::uint64_t seed) {
  Verdict v;
  const Tensor x0 = image.normalized();
  PurifyResult p = purify(x0, denoiser, schedule, lambda, seed);
  ImageAsset twin = image;
  twin.pixels = p.pixels;
  const auto sim = cosine_similarity(extractor.extract(x0), extractor.extract(twin.normalized()));
  if (!sim) {
    std::cerr << "warning: zero feature vector for item " << image.item_id
              << "; flagged adversarial\n";
    v.zero_feature = true;
    v.adversarial = true;
    v.similarity = 0.0;
  } else {
    v.similarity = *sim;
    v.adversarial = *sim < rho;
  }
  v.purified_pixels = std::move(p.pixels);
  return v;
}

DetectorCalibration calibrate_rho(const Denoiser& denoiser, const NoiseSchedule& schedule,
                                  const std::vector<ImageAsset>& clean_corpus,
                                  const Extractor& extractor, double lambda, std::uint64_t seed) {
  if (clean_corpus.empty()) throw EmptyCorpus("calibration corpus is empty");
  DetectorCalibration cal;
  cal.similarities.reserve(clean_corpus.size());
  for (std::size_t i = 0; i < clean_corpus.size(); ++i) {
    const Verdict v = detect(clean_corpus[i], denoiser, schedule, extractor, 0.0, lambda,
                             derive_seed(seed, "calibrate", i));
    cal.similarities.push_back(v.similarity);
  }
  cal.rho = *std::min_element(cal.similarities.begin(), cal.similarities.end());
  return cal;
}

void write_calibration_csv(std::ostream& out, const DetectorCalibration& calibration) {
  out << "index,similarity\n";
  char buf[64];
  for (std::size_t i = 0; i < calibration.similarities.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i, calibration.similarities[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "rho,%.6f\n", calibration.rho);
  out << buf;
}

// ---- defense --------------------------------------------------------------

GdmpdDefense::GdmpdDefense(const Denoiser& denoiser, NoiseSchedule schedule,
                           const Extractor& extractor, double rho, double lambda,
                           std::uint64_t seed)
    : denoiser_(denoiser),
      schedule_(std::move(schedule)),
      extractor_(extractor),
      rho_(rho),
      lambda_(lambda),
      seed_(seed) {}

ScreenResult GdmpdDefense::screen(const ImageAsset& upload, std::size_t epoch) {
  const std::uint64_t seed = derive_seed(seed_, "screen", epoch, upload.item_id);
  const auto key = std::make_pair(pixel_hash(upload), seed);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(key, detect(upload, denoiser_, schedule_, extractor_, rho_, lambda_, seed))
             .first;
  }
  ScreenResult r;
  r.stored = upload;
  r.stored.pixels = it->second.purified_pixels;
  r.similarity = it->second.similarity;
  r.rho = rho_;
  r.adversarial = it->second.similarity < rho_ || it->second.zero_feature;
  return r;
}

}  // namespace vfr
