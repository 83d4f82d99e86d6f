#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace vfr {

struct InteractionRecord {
  std::size_t user = 0;
  std::size_t item = 0;
  int rating = 0;  // 0 or 1

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

struct Catalog {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::size_t> popularity;  // positive records per item
};

struct Dataset {
  Catalog catalog;
  std::vector<InteractionRecord> records;
};

// Rebuilds Catalog::popularity from positive records.
std::vector<std::size_t> count_popularity(const std::vector<InteractionRecord>& records,
                                          std::size_t num_items);

// Tab-separated `user<TAB>item<TAB>rating`. Raw ids are remapped densely in
// order of first appearance; any positive rating becomes 1.
Dataset parse_interactions(std::istream& in);
Dataset load_interactions(const std::filesystem::path& path);
void save_interactions(const std::vector<InteractionRecord>& records,
                       const std::filesystem::path& path);

// Leave-one-out split. `held_out[u]` is the user's held-out positive.
struct EvalSplit {
  std::vector<std::size_t> held_out;
  std::vector<InteractionRecord> train_positives;

  // Items a user may be ranked on: every item not among their training
  // positives (the held-out item is a candidate).
  std::vector<std::size_t> candidates(std::size_t user, std::size_t num_items) const;
};

EvalSplit make_eval_split(const std::vector<InteractionRecord>& positives,
                          const Catalog& catalog, std::uint64_t seed);

// Adds `ratio` rating-0 records per positive, drawn from items the user never
// interacted with (`positives` plus the held-out item of `split`, if given).
// Negatives are distinct per user when enough items exist, otherwise distinct
// per positive.
std::vector<InteractionRecord> sample_negatives(const std::vector<InteractionRecord>& positives,
                                                const Catalog& catalog, std::size_t ratio,
                                                std::uint64_t seed,
                                                const EvalSplit* split = nullptr);

// `count` least-popular items, ties broken by ascending id.
std::vector<std::size_t> select_cold_targets(const Catalog& catalog, std::size_t count);

// Records grouped per user, preserving input order.
std::vector<std::vector<InteractionRecord>> group_by_user(
    const std::vector<InteractionRecord>& records, std::size_t num_users);

}  // namespace vfr
