#include "vfr/dataio/interactions.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>

#include "vfr/errors.hpp"
#include "vfr/rng.hpp"

namespace vfr {

std::vector<std::size_t> count_popularity(const std::vector<InteractionRecord>& records,
                                          std::size_t num_items) {
  std::vector<std::size_t> pop(num_items, 0);
  for (const auto& r : records) {
    if (r.rating == 1) ++pop.at(r.item);
  }
  return pop;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

Dataset parse_interactions(std::istream& in) {
  std::unordered_map<std::string, std::size_t> user_ids, item_ids;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw MalformedLine(line_no, "expected user<TAB>item<TAB>rating");
    }
    double raw = 0.0;
    const auto rf = fields[2];
    auto [ptr, ec] = std::from_chars(rf.data(), rf.data() + rf.size(), raw);
    if (ec != std::errc() || ptr != rf.data() + rf.size()) {
      throw MalformedLine(line_no, "rating is not a number");
    }
    const auto user = user_ids.try_emplace(std::string(fields[0]), user_ids.size()).first->second;
    const auto item = item_ids.try_emplace(std::string(fields[1]), item_ids.size()).first->second;
    if (!seen.emplace(user, item).second) {
      throw DuplicateInteraction("line " + std::to_string(line_no) + ": user " +
                                 std::string(fields[0]) + " item " + std::string(fields[1]));
    }
    ds.records.push_back({user, item, raw > 0 ? 1 : 0});
  }
  if (ds.records.empty()) throw EmptyDataset("no interaction records");
  ds.catalog.num_users = user_ids.size();
  ds.catalog.num_items = item_ids.size();
  ds.catalog.popularity = count_popularity(ds.records, ds.catalog.num_items);
  return ds;
}

Dataset load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_interactions(in);
}

void save_interactions(const std::vector<InteractionRecord>& records,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << r.user << '\t' << r.item << '\t' << r.rating << '\n';
}

std::vector<std::vector<InteractionRecord>> group_by_user(
    const std::vector<InteractionRecord>& records, std::size_t num_users) {
  std::vector<std::vector<InteractionRecord>> out(num_users);
  for (const auto& r : records) out.at(r.user).push_back(r);
  return out;
}

std::vector<std::size_t> EvalSplit::candidates(std::size_t user, std::size_t num_items) const {
  std::vector<bool> excluded(num_items, false);
  for (const auto& r : train_positives) {
    if (r.user == user) excluded[r.item] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < num_items; ++j) {
    if (!excluded[j]) out.push_back(j);
  }
  return out;
}

EvalSplit make_eval_split(const std::vector<InteractionRecord>& positives,
                          const Catalog& catalog, std::uint64_t seed) {
  const auto per_user = group_by_user(positives, catalog.num_users);
  EvalSplit split;
  split.held_out.assign(catalog.num_users, 0);
  for (std::size_t u = 0; u < catalog.num_users; ++u) {
    std::vector<std::size_t> pos;
    for (const auto& r : per_user[u]) {
      if (r.rating == 1) pos.push_back(r.item);
    }
    if (pos.size() < 2) {
      throw TooFewPositives("user " + std::to_string(u) + " has " + std::to_string(pos.size()) +
                            " positives, need at least 2");
    }
    Rng rng(derive_seed(seed, "eval_split", 0, u));
    split.held_out[u] = pos[rng.below(pos.size())];
  }
  for (const auto& r : positives) {
    if (r.rating == 1 && r.item != split.held_out[r.user]) split.train_positives.push_back(r);
  }
  return split;
}

std::vector<InteractionRecord> sample_negatives(const std::vector<InteractionRecord>& positives,
                                                const Catalog& catalog, std::size_t ratio,
                                                std::uint64_t seed, const EvalSplit* split) {
  if (ratio < 1) throw InsufficientNegatives("negative ratio must be at least 1");
  const auto per_user = group_by_user(positives, catalog.num_users);
  std::vector<InteractionRecord> out;
  out.reserve(positives.size() * (ratio + 1));
  for (std::size_t u = 0; u < catalog.num_users; ++u) {
    const auto& mine = per_user[u];
    if (mine.empty()) continue;
    std::vector<bool> touched(catalog.num_items, false);
    for (const auto& r : mine) touched[r.item] = true;
    if (split) touched[split->held_out.at(u)] = true;
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < catalog.num_items; ++j) {
      if (!touched[j]) pool.push_back(j);
    }
    if (pool.size() < ratio) {
      throw InsufficientNegatives("user " + std::to_string(u) + " has only " +
                                  std::to_string(pool.size()) + " non-interacted items");
    }
    std::size_t npos = 0;
    for (const auto& r : mine) npos += (r.rating == 1);
    Rng rng(derive_seed(seed, "negatives", 0, u));
    std::vector<std::size_t> picks;
    if (pool.size() >= ratio * npos) {
      for (auto k : rng.sample_without_replacement(pool.size(), ratio * npos)) {
        picks.push_back(pool[k]);
      }
    } else {
      for (std::size_t p = 0; p < npos; ++p) {
        for (auto k : rng.sample_without_replacement(pool.size(), ratio)) {
          picks.push_back(pool[k]);
        }
      }
    }
    std::size_t next = 0;
    for (const auto& r : mine) {
      out.push_back(r);
      if (r.rating != 1) continue;
      for (std::size_t k = 0; k < ratio; ++k) out.push_back({u, picks[next++], 0});
    }
  }
  return out;
}

std::vector<std::size_t> select_cold_targets(const Catalog& catalog, std::size_t count) {
  std::vector<std::size_t> order(catalog.num_items);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return catalog.popularity[a] < catalog.popularity[b];
  });
  order.resize(std::min(count, order.size()));
  return order;
}

}  // namespace vfr
