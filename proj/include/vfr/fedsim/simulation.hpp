#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "vfr/dataio/image.hpp"
#include "vfr/dataio/interactions.hpp"
#include "vfr/dataio/synth.hpp"
#include "vfr/recmodels/model.hpp"
#include "vfr/vision/extractor.hpp"

namespace vfr {

// Everything the simulator needs to know about the data.
struct World {
  Catalog catalog;
  std::vector<std::vector<InteractionRecord>> client_data;  // training records incl. negatives
  EvalSplit split;
  std::vector<ImageAsset> images;  // indexed by item id
  std::vector<std::size_t> targets;
};

// Synthetic world, leave-one-out split, 1:ratio negatives and the
// least-popular `num_targets` items as targets.
World make_world(const SynthParams& params, std::size_t negative_ratio = 4,
                 std::size_t num_targets = 1);
// Same from raw interactions; images are synthesised per item.
World make_world(const Dataset& data, std::uint64_t seed, std::size_t image_side,
                 std::size_t negative_ratio = 4, std::size_t num_targets = 1);

struct FedConfig {
  ModelKind model = ModelKind::Vncf;
  std::size_t global_epochs = 30;
  // Learning rate of both the private update and the server aggregation.
  double lr = 0.001;
  std::size_t local_epochs = 1;
  double client_fraction = 1.0;
  // Attack rounds are epochs strictly after this one.
  std::size_t attack_start_epoch = 8;
  std::size_t er_k = 5;
  std::size_t ndcg_k = 20;
  std::uint64_t seed = 1;
  // Initial catalog images also pass through the defense when one is set.
  bool screen_initial_catalog = true;
  // 0: use FRG_THREADS, else 1.
  std::size_t threads = 0;
};

struct ServerState {
  PublicParams public_params;
  std::vector<ImageAsset> image_registry;  // indexed by item id
  Tensor features;                         // cached extractor outputs [items x d]
  std::size_t epoch = 0;
};

struct RoundReport {
  std::size_t epoch = 0;
  std::vector<std::size_t> participants;
  double er = 0.0;
  std::vector<double> er_per_target;
  double ndcg = 0.0;
  std::size_t malicious_uploads = 0;
  std::size_t image_uploads = 0;
  double wall_seconds = 0.0;
};

struct DetectionRecord {
  std::size_t item_id = 0;
  double similarity = 0.0;
  double rho = 0.0;
  bool adversarial = false;
  std::size_t epoch = 0;
};

// What the server can see of a round while it is in progress.
struct RoundContext {
  std::size_t epoch = 0;
  const PublicParams& snapshot;
  const Tensor& features;
  const std::vector<ImageAsset>& registry;
  const Catalog& catalog;
  const std::vector<std::size_t>& targets;
  const Extractor& extractor;
};

// A malicious party. Image uploads happen at the start of a round, before
// client sampling; model uploads are collected with the benign ones. Both are
// requested every attack round regardless of sampling.
class Adversary {
 public:
  virtual ~Adversary() = default;
  virtual std::string name() const = 0;
  virtual std::vector<ImageAsset> image_uploads(const RoundContext& ctx) = 0;
  virtual std::vector<GradientUpload> model_uploads(const RoundContext& ctx) = 0;
};

struct ScreenResult {
  ImageAsset stored;  // what enters the registry
  double similarity = 1.0;
  double rho = 0.0;
  bool adversarial = false;
};

// Server-side screening of every uploaded image.
class ImageDefense {
 public:
  virtual ~ImageDefense() = default;
  virtual std::string name() const = 0;
  virtual ScreenResult screen(const ImageAsset& upload, std::size_t epoch) = 0;
};

// floor(fraction * n) ids (at least one), uniform without replacement,
// returned ascending.
std::vector<std::size_t> sample_clients(std::size_t num_clients, double fraction,
                                        std::uint64_t seed, std::size_t epoch);

// P <- P - lr * sum(uploads), summed in ascending client id order.
void aggregate(PublicParams& params, std::vector<GradientUpload> uploads, double lr,
               std::size_t epoch);

void register_image(ServerState& server, const Extractor& extractor, ImageAsset asset,
                    std::size_t epoch, ImageDefense* defense,
                    std::vector<DetectionRecord>* log);

class Simulation {
 public:
  Simulation(FedConfig config, World world, const Extractor& extractor,
             Adversary* adversary = nullptr, ImageDefense* defense = nullptr);

  // Runs the next global epoch.
  RoundReport step();
  std::vector<RoundReport> run();

  const FedConfig& config() const { return config_; }
  const ServerState& server() const { return server_; }
  const World& world() const { return world_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const std::vector<DetectionRecord>& detection_log() const { return detections_; }
  const std::vector<RoundReport>& reports() const { return reports_; }

 private:
  RoundReport evaluate(std::size_t epoch) const;

  FedConfig config_;
  World world_;
  const Extractor& extractor_;
  Adversary* adversary_;
  ImageDefense* defense_;
  ServerState server_;
  std::vector<ClientState> clients_;
  std::vector<DetectionRecord> detections_;
  std::vector<RoundReport> reports_;
  std::size_t threads_ = 1;
};

std::vector<RoundReport> run_experiment(const FedConfig& config, World world,
                                        const Extractor& extractor,
                                        Adversary* adversary = nullptr,
                                        ImageDefense* defense = nullptr);

// ---- outputs --------------------------------------------------------------

void write_rounds_csv(std::ostream& out, const std::vector<RoundReport>& reports,
                      const std::vector<std::size_t>& targets, const std::string& attack,
                      const std::string& defense, std::uint64_t seed, std::size_t er_k = 5,
                      std::size_t ndcg_k = 20);
void write_detection_csv(std::ostream& out, const std::vector<DetectionRecord>& log);

// "FRG1", u32 kind, u32 tensor count, then per tensor: u32 rank, u64 dims,
// row-major little-endian doubles.
void save_checkpoint(const PublicParams& params, std::ostream& out);
void save_checkpoint(const PublicParams& params, const std::filesystem::path& path);
PublicParams load_checkpoint(std::istream& in);
PublicParams load_checkpoint(const std::filesystem::path& path);

// Server state as bytes (checkpoint plus registry pixels); used to show no
// private value leaks into it.
std::string serialize_server_state(const ServerState& server);

std::size_t threads_from_env();

}  // namespace vfr
