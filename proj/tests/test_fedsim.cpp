#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <set>
#include <sstream>

#include "vfr/attacks/attacks.hpp"
#include "vfr/errors.hpp"
#include "vfr/fedsim/simulation.hpp"
#include "vfr/harness/metrics.hpp"

using namespace vfr;

namespace {

World small_world() {
  SynthParams p;
  p.num_users = 30;
  p.num_items = 60;
  p.density = 0.1;
  return make_world(p);
}

FedConfig small_config(ModelKind kind, std::size_t epochs = 4) {
  FedConfig c;
  c.model = kind;
  c.global_epochs = epochs;
  c.lr = 0.01;
  c.client_fraction = 0.5;
  c.threads = 1;
  return c;
}

const Extractor& extractor() {
  static const Extractor ex(7);
  return ex;
}

// Records which epochs the simulator asked it for uploads.
class Recorder : public Adversary {
 public:
  std::string name() const override { return "recorder"; }
  std::vector<ImageAsset> image_uploads(const RoundContext& ctx) override {
    image_epochs.push_back(ctx.epoch);
    return {};
  }
  std::vector<GradientUpload> model_uploads(const RoundContext& ctx) override {
    model_epochs.push_back(ctx.epoch);
    return {};
  }
  std::vector<std::size_t> image_epochs, model_epochs;
};

std::string csv_of(const std::vector<RoundReport>& reports, const World& w) {
  std::ostringstream out;
  write_rounds_csv(out, reports, w.targets, "none", "off", 1);
  return out.str();
}

std::string checkpoint_of(const PublicParams& p) {
  std::ostringstream out;
  save_checkpoint(p, out);
  return out.str();
}

}  // namespace

TEST_CASE("client sampling") {
  const auto s = sample_clients(100, 0.1, 3, 1);
  CHECK(s.size() == 10);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 10);
  CHECK(s.back() < 100);
  CHECK(sample_clients(100, 0.1, 3, 1) == s);
  CHECK(sample_clients(100, 0.1, 3, 2) != s);
  CHECK(sample_clients(7, 0.01, 3, 1).size() == 1);
  CHECK(sample_clients(7, 1.0, 3, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(sample_clients(10, 0.35, 1, 1).size() == 3);
}

TEST_CASE("aggregation is linear and order independent") {
  const PublicParams p0 = PublicParams::init(ModelKind::Vncf, 5, 4, 2);
  GradientUpload a = GradientUpload::zeros(p0, 4, 3);
  GradientUpload b = GradientUpload::zeros(p0, 1, 3);
  a.item_rows[1] = Tensor::vector(std::vector<double>(kEmbeddingDim, 0.25));
  b.item_rows[1] = Tensor::vector(std::vector<double>(kEmbeddingDim, -1.5));
  b.item_rows[4] = Tensor::vector(std::vector<double>(kEmbeddingDim, 2.0));
  a.head[3] = 1.0;
  b.head[3] = 0.5;
  a.weights[0].at(2, 2) = 3.0;
  b.visual_transform.at(0, 1) = -4.0;

  PublicParams p = p0;
  aggregate(p, {a, b}, 0.1, 3);
  CHECK(std::abs(p.item_embeddings.at(1, 0) - (p0.item_embeddings.at(1, 0) - 0.1 * (0.25 - 1.5))) < 1e-15);
  CHECK(std::abs(p.item_embeddings.at(4, 7) - (p0.item_embeddings.at(4, 7) - 0.1 * 2.0)) < 1e-15);
  CHECK(p.item_embeddings.at(0, 0) == p0.item_embeddings.at(0, 0));
  CHECK(std::abs(p.head[3] - (p0.head[3] - 0.1 * 1.5)) < 1e-15);
  CHECK(std::abs(p.weights[0].at(2, 2) - (p0.weights[0].at(2, 2) - 0.3)) < 1e-15);
  CHECK(std::abs(p.visual_transform.at(0, 1) - (p0.visual_transform.at(0, 1) + 0.4)) < 1e-15);

  PublicParams q = p0;
  aggregate(q, {b, a}, 0.1, 3);
  CHECK(q == p);

  PublicParams r = p0;
  aggregate(r, {}, 0.1, 3);
  CHECK(r == p0);

  GradientUpload stale = GradientUpload::zeros(p0, 2, 2);
  CHECK_THROWS_AS(aggregate(r, {a, stale}, 0.1, 3), StaleUpload);
  GradientUpload outside = GradientUpload::zeros(p0, 2, 3);
  outside.item_rows[9] = Tensor::vector(std::vector<double>(kEmbeddingDim, 1.0));
  CHECK_THROWS_AS(aggregate(r, {outside}, 0.1, 3), UnknownItem);
}

TEST_CASE("adversary is consulted exactly on the attack rounds") {
  World w = small_world();
  FedConfig c = small_config(ModelKind::Ncf, 6);
  c.attack_start_epoch = 3;
  Recorder rec;
  Simulation sim(c, w, extractor(), &rec);
  sim.run();
  CHECK(rec.model_epochs == std::vector<std::size_t>{4, 5, 6});
  CHECK(rec.image_epochs == std::vector<std::size_t>{4, 5, 6});

  // Start at the last epoch: no attack round at all.
  FedConfig late = small_config(ModelKind::Ncf, 6);
  late.attack_start_epoch = 6;
  Recorder none;
  Simulation sim2(late, w, extractor(), &none);
  sim2.run();
  CHECK(none.model_epochs.empty());
}

TEST_CASE("reported metrics match a fresh evaluation of the final state") {
  for (ModelKind kind : {ModelKind::Ncf, ModelKind::Vncf, ModelKind::LightGcn, ModelKind::LightVgcn}) {
    World w = small_world();
    Simulation sim(small_config(kind, 3), w, extractor());
    const auto reports = sim.run();
    REQUIRE(reports.size() == 3);
    for (const auto& r : reports) {
      CHECK(r.ndcg >= 0.0);
      CHECK(r.ndcg <= 1.0);
      CHECK(r.malicious_uploads == 0);
      CHECK(r.participants.size() == 15);
    }
    const Tensor* f = uses_visual(kind) ? &sim.server().features : nullptr;
    const RankingMetrics m = ranking_metrics(sim.server().public_params, f, sim.clients(), w.targets, 5,
                                             &w.split, 20);
    CHECK(m.exposure.mean == reports.back().er);
    CHECK(m.ndcg == reports.back().ndcg);
  }
}

TEST_CASE("a clean run at desk scale never exposes the cold target") {
  SynthParams p;
  p.num_users = 200;
  p.num_items = 1000;
  p.density = 0.006;
  p.category_affinity = 20.0;
  World w = make_world(p);
  FedConfig c = small_config(ModelKind::Ncf, 8);
  c.lr = 0.005;
  c.client_fraction = 0.1;
  for (const auto& r : run_experiment(c, w, extractor())) CHECK(r.er == 0.0);
}

TEST_CASE("simulation is deterministic across reruns and thread counts") {
  for (ModelKind kind : {ModelKind::Vncf, ModelKind::LightGcn}) {
    World w = small_world();
    FedConfig c = small_config(kind);
    Simulation a(c, w, extractor());
    const auto ra = a.run();
    Simulation b(c, w, extractor());
    const auto rb = b.run();
    CHECK(csv_of(ra, w) == csv_of(rb, w));
    CHECK(checkpoint_of(a.server().public_params) == checkpoint_of(b.server().public_params));

    c.threads = 3;
    Simulation t(c, w, extractor());
    const auto rt = t.run();
    CHECK(csv_of(rt, w) == csv_of(ra, w));
    CHECK(checkpoint_of(t.server().public_params) == checkpoint_of(a.server().public_params));
  }
}

TEST_CASE("a no-op attacker is indistinguishable from none") {
  World w = small_world();
  FedConfig c = small_config(ModelKind::Vncf, 5);
  c.attack_start_epoch = 2;
  AttackConfig ac;
  ac.kind = AttackKind::None;
  Attacker atk(ac, provider_for(w, 9999), w.catalog.num_users);
  Simulation with(c, w, extractor(), &atk);
  Simulation without(c, w, extractor());
  CHECK(csv_of(with.run(), w) == csv_of(without.run(), w));
  CHECK(with.server().public_params == without.server().public_params);
}

TEST_CASE("server state holds no private embedding") {
  World w = small_world();
  Simulation sim(small_config(ModelKind::LightVgcn, 3), w, extractor());
  sim.run();
  const std::string bytes = serialize_server_state(sim.server());
  for (const auto& c : sim.clients()) {
    for (double v : c.embedding.values()) {
      char raw[sizeof(double)];
      std::memcpy(raw, &v, sizeof v);
      CHECK(bytes.find(std::string(raw, sizeof raw)) == std::string::npos);
    }
  }
}

TEST_CASE("checkpoints round trip") {
  for (ModelKind kind : {ModelKind::Ncf, ModelKind::LightVgcn}) {
    const PublicParams p = PublicParams::init(kind, 7, 64, 4);
    const std::string bytes = checkpoint_of(p);
    CHECK(bytes.substr(0, 4) == "FRG1");
    std::istringstream in(bytes);
    const PublicParams back = load_checkpoint(in);
    CHECK(back == p);
    CHECK(checkpoint_of(back) == bytes);

    std::istringstream cut(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(cut), CorruptCheckpoint);
    std::istringstream wrong("FRG2" + bytes.substr(4));
    CHECK_THROWS_AS(load_checkpoint(wrong), CorruptCheckpoint);
  }
}

TEST_CASE("rounds csv layout") {
  World w = small_world();
  const auto reports = run_experiment(small_config(ModelKind::Ncf, 2), w, extractor());
  const std::string csv = csv_of(reports, w);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("epoch,", 0) == 0);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 2);
}
