#include "vfr/fedsim/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "vfr/errors.hpp"
#include "vfr/harness/metrics.hpp"
#include "vfr/numcore/optim.hpp"
#include "vfr/rng.hpp"

namespace vfr {

namespace {

World finish_world(Catalog catalog, const std::vector<InteractionRecord>& positives,
                   std::vector<ImageAsset> images, std::uint64_t seed, std::size_t ratio,
                   std::size_t num_targets) {
  World w;
  w.split = make_eval_split(positives, catalog, derive_seed(seed, "world_split"));
  auto train = sample_negatives(w.split.train_positives, catalog, ratio,
                                derive_seed(seed, "world_negatives"), &w.split);
  w.client_data = group_by_user(train, catalog.num_users);
  w.targets = select_cold_targets(catalog, num_targets);
  w.catalog = std::move(catalog);
  w.images = std::move(images);
  return w;
}

}  // namespace

World make_world(const SynthParams& params, std::size_t negative_ratio, std::size_t num_targets) {
  SynthWorld s = synth_world(params);
  return finish_world(std::move(s.catalog), s.records, std::move(s.images), params.seed,
                      negative_ratio, num_targets);
}

World make_world(const Dataset& data, std::uint64_t seed, std::size_t image_side,
                 std::size_t negative_ratio, std::size_t num_targets) {
  std::vector<InteractionRecord> positives;
  for (const auto& r : data.records) {
    if (r.rating == 1) positives.push_back(r);
  }
  std::vector<ImageAsset> images;
  for (std::size_t j = 0; j < data.catalog.num_items; ++j) {
    ImageAsset img = synth_image(seed, j, j % 4, 4, image_side);
    img.item_id = j;
    images.push_back(std::move(img));
  }
  return finish_world(data.catalog, positives, std::move(images), seed, negative_ratio,
                      num_targets);
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, double fraction,
                                        std::uint64_t seed, std::size_t epoch) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidConfig("client fraction must lie in (0, 1]");
  }
  std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(num_clients)));
  k = std::clamp<std::size_t>(k, std::min<std::size_t>(1, num_clients), num_clients);
  std::vector<std::size_t> ids;
  if (k == num_clients) {
    ids.resize(num_clients);
    for (std::size_t i = 0; i < num_clients; ++i) ids[i] = i;
    return ids;
  }
  Rng rng(derive_seed(seed, "sample_clients", epoch));
  ids = rng.sample_without_replacement(num_clients, k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void aggregate(PublicParams& params, std::vector<GradientUpload> uploads, double lr,
               std::size_t epoch) {
  if (uploads.empty()) return;
  std::stable_sort(uploads.begin(), uploads.end(),
                   [](const GradientUpload& a, const GradientUpload& b) {
                     return a.client_id < b.client_id;
                   });
  GradientUpload total = GradientUpload::zeros(params, 0, epoch);
  for (const auto& u : uploads) {
    if (u.epoch != epoch) {
      throw StaleUpload("upload from client " + std::to_string(u.client_id) + " is for epoch " +
                        std::to_string(u.epoch) + ", server is at " + std::to_string(epoch));
    }
    for (const auto& [row, g] : u.item_rows) {
      if (row >= params.num_items()) {
        throw UnknownItem("upload row " + std::to_string(row) + " outside catalog");
      }
    }
    total.accumulate(u);
  }
  for (const auto& [row, g] : total.item_rows) {
    auto dst = params.item_embeddings.row(row);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= lr * g[k];
  }
  if (!params.visual_transform.empty()) {
    sgd_apply(params.visual_transform, total.visual_transform, lr);
  }
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    sgd_apply(params.weights[l], total.weights[l], lr);
    sgd_apply(params.biases[l], total.biases[l], lr);
  }
  sgd_apply(params.head, total.head, lr);
}

void register_image(ServerState& server, const Extractor& extractor, ImageAsset asset,
                    std::size_t epoch, ImageDefense* defense,
                    std::vector<DetectionRecord>* log) {
  if (asset.item_id >= server.image_registry.size()) {
    throw UnknownItem("image for item " + std::to_string(asset.item_id) + " outside catalog");
  }
  if (asset.height != extractor.image_side() || asset.width != extractor.image_side() ||
      asset.pixels.size() != asset.num_values()) {
    throw DimensionMismatch("uploaded image has the wrong dimensions");
  }
  asset.uploaded_epoch = epoch;
  if (defense != nullptr) {
    ScreenResult r = defense->screen(asset, epoch);
    if (log != nullptr) {
      log->push_back({asset.item_id, r.similarity, r.rho, r.adversarial, epoch});
    }
    r.stored.item_id = asset.item_id;
    r.stored.provider_id = asset.provider_id;
    r.stored.uploaded_epoch = epoch;
    r.stored.ground_truth_adversarial = asset.ground_truth_adversarial;
    asset = std::move(r.stored);
  }
  const std::size_t j = asset.item_id;
  const Tensor f = extractor.extract(asset.normalized());
  if (server.features.empty()) {
    server.features = Tensor(Shape{server.image_registry.size(), f.size()});
  }
  std::copy(f.values().begin(), f.values().end(), server.features.row(j).begin());
  server.image_registry[j] = std::move(asset);
}

std::size_t threads_from_env() {
  if (const char* s = std::getenv("FRG_THREADS")) {
    const long v = std::strtol(s, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

// ---- Simulation -----------------------------------------------------------

Simulation::Simulation(FedConfig config, World world, const Extractor& extractor,
                       Adversary* adversary, ImageDefense* defense)
    : config_(config),
      world_(std::move(world)),
      extractor_(extractor),
      adversary_(adversary),
      defense_(defense) {
  if (world_.images.size() != world_.catalog.num_items) {
    throw DimensionMismatch("every item needs exactly one image");
  }
  if (world_.client_data.size() != world_.catalog.num_users) {
    throw DimensionMismatch("client data does not match the user count");
  }
  threads_ = config_.threads != 0 ? config_.threads : threads_from_env();
  server_.public_params = PublicParams::init(config_.model, world_.catalog.num_items,
                                             extractor_.output_dim(),
                                             derive_seed(config_.seed, "public"));
  server_.image_registry.resize(world_.catalog.num_items);
  ImageDefense* initial = config_.screen_initial_catalog ? defense_ : nullptr;
  for (const ImageAsset& img : world_.images) {
    register_image(server_, extractor_, img, 0, initial, &detections_);
  }
  for (std::size_t u = 0; u < world_.catalog.num_users; ++u) {
    clients_.push_back(ClientState::init(u, world_.client_data[u], derive_seed(config_.seed, "clients")));
  }
}

RoundReport Simulation::evaluate(std::size_t epoch) const {
  RoundReport r;
  r.epoch = epoch;
  RankingMetrics m = ranking_metrics(server_.public_params, &server_.features, clients_,
                                     world_.targets, config_.er_k, &world_.split, config_.ndcg_k);
  r.er = m.exposure.mean;
  r.er_per_target = std::move(m.exposure.per_target);
  r.ndcg = m.ndcg;
  return r;
}

RoundReport Simulation::step() {
  const auto started = std::chrono::steady_clock::now();
  const std::size_t epoch = ++server_.epoch;
  const bool attacking = adversary_ != nullptr && epoch > config_.attack_start_epoch;
  auto context = [&]() {
    return RoundContext{epoch, server_.public_params, server_.features, server_.image_registry,
                        world_.catalog, world_.targets, extractor_};
  };

  std::size_t image_uploads = 0;
  if (attacking) {
    for (ImageAsset& img : adversary_->image_uploads(context())) {
      register_image(server_, extractor_, std::move(img), epoch, defense_, &detections_);
      ++image_uploads;
    }
  }

  const auto sampled = sample_clients(clients_.size(), config_.client_fraction, config_.seed, epoch);
  std::vector<LocalTrainResult> results(sampled.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      results[k] = local_train(clients_[sampled[k]], server_.public_params, &server_.features,
                               config_.local_epochs, config_.lr, epoch);
    }
  };
  const std::size_t nthreads = std::min(threads_, sampled.size());
  if (nthreads <= 1) {
    work(0, sampled.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (sampled.size() + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
      const std::size_t b = t * chunk, e = std::min(sampled.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<GradientUpload> uploads;
  uploads.reserve(results.size());
  for (std::size_t k = 0; k < sampled.size(); ++k) {
    clients_[sampled[k]].embedding = std::move(results[k].embedding);
    uploads.push_back(std::move(results[k].upload));
  }
  std::size_t malicious = 0;
  if (attacking) {
    for (GradientUpload& u : adversary_->model_uploads(context())) {
      if (u.client_id < clients_.size()) {
        throw InvalidConfig("malicious client id collides with a benign user");
      }
      uploads.push_back(std::move(u));
      ++malicious;
    }
  }
  aggregate(server_.public_params, std::move(uploads), config_.lr, epoch);
  if (!server_.public_params.all_finite()) {
    throw DivergedRun("public parameters became non-finite at epoch " + std::to_string(epoch));
  }

  RoundReport report = evaluate(epoch);
  report.participants = sampled;
  report.malicious_uploads = malicious;
  report.image_uploads = image_uploads;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  reports_.push_back(report);
  return report;
}

std::vector<RoundReport> Simulation::run() {
  while (server_.epoch < config_.global_epochs) step();
  return reports_;
}

std::vector<RoundReport> run_experiment(const FedConfig& config, World world,
                                        const Extractor& extractor, Adversary* adversary,
                                        ImageDefense* defense) {
  Simulation sim(config, std::move(world), extractor, adversary, defense);
  return sim.run();
}

// ---- outputs --------------------------------------------------------------

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw CorruptCheckpoint("checkpoint truncated");
  }
  return v;
}

}  // namespace

void write_rounds_csv(std::ostream& out, const std::vector<RoundReport>& reports,
                      const std::vector<std::size_t>& targets, const std::string& attack,
                      const std::string& defense, std::uint64_t seed, std::size_t er_k,
                      std::size_t ndcg_k) {
  out << "epoch,er_at_" << er_k << ",ndcg_at_" << ndcg_k << ",attack,defense,seed";
  for (std::size_t t : targets) out << ",er_at_" << er_k << "_item" << t;
  out << '\n';
  for (const auto& r : reports) {
    out << r.epoch << ',' << fixed(r.er) << ',' << fixed(r.ndcg) << ',' << attack << ','
        << defense << ',' << seed;
    for (double e : r.er_per_target) out << ',' << fixed(e);
    out << '\n';
  }
}

void write_detection_csv(std::ostream& out, const std::vector<DetectionRecord>& log) {
  out << "item_id,similarity,rho,verdict,epoch\n";
  for (const auto& d : log) {
    out << d.item_id << ',' << fixed(d.similarity) << ',' << fixed(d.rho) << ','
        << (d.adversarial ? "adversarial" : "clean") << ',' << d.epoch << '\n';
  }
}

void save_checkpoint(const PublicParams& params, std::ostream& out) {
  out.write("FRG1", 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.kind));
  const auto ts = params.tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  for (const Tensor* t : ts) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
}

void save_checkpoint(const PublicParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  save_checkpoint(params, out);
}

PublicParams load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FRG1", 4) != 0) {
    throw CorruptCheckpoint("missing FRG1 header");
  }
  const auto kind = get<std::uint32_t>(in);
  if (kind > static_cast<std::uint32_t>(ModelKind::LightVgcn)) {
    throw CorruptCheckpoint("unknown model kind " + std::to_string(kind));
  }
  const auto count = get<std::uint32_t>(in);
  std::vector<Tensor> ts;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = get<std::uint32_t>(in);
    if (rank == 0 || rank > 4) throw CorruptCheckpoint("bad tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = get<std::uint64_t>(in);
      if (dim == 0 || dim > (1u << 24)) throw CorruptCheckpoint("bad tensor dimension");
      shape.push_back(dim);
    }
    std::vector<double> values(shape_size(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw CorruptCheckpoint("checkpoint truncated");
    }
    ts.emplace_back(std::move(shape), std::move(values));
  }
  PublicParams p;
  p.kind = static_cast<ModelKind>(kind);
  const std::size_t expected = uses_visual(p.kind) ? 7 : 6;
  if (ts.size() != expected) throw CorruptCheckpoint("unexpected tensor count");
  std::size_t i = 0;
  p.item_embeddings = std::move(ts[i++]);
  if (uses_visual(p.kind)) p.visual_transform = std::move(ts[i++]);
  for (int l = 0; l < 2; ++l) {
    p.weights.push_back(std::move(ts[i++]));
    p.biases.push_back(std::move(ts[i++]));
  }
  p.head = std::move(ts[i++]);
  return p;
}

PublicParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return load_checkpoint(in);
}

std::string serialize_server_state(const ServerState& server) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(server.public_params, out);
  put<std::uint64_t>(out, server.epoch);
  for (const auto& img : server.image_registry) {
    put<std::uint64_t>(out, img.item_id);
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
  }
  out.write(reinterpret_cast<const char*>(server.features.data()),
            static_cast<std::streamsize>(server.features.size() * sizeof(double)));
  return out.str();
}

}  // namespace vfr
