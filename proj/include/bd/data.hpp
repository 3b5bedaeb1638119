#pragma once

// Interaction log ingestion and the leave-one-out split.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bd {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  std::optional<std::int64_t> timestamp;
};

enum class HeaderMode { automatic, present, absent };

// Column layout is a string over {u, i, r, t}: user, item, rating, timestamp.
// Lines may carry fewer columns than the layout names, but never fewer than
// two. A zero delimiter means tab-or-comma detection on the first line.
struct InputFormat {
  char delimiter = '\0';
  std::string columns = "uirt";
  HeaderMode header = HeaderMode::automatic;
};

std::vector<RawInteraction> parse_interactions(std::istream& in, const InputFormat& format = {});
std::vector<RawInteraction> load_interactions(const std::filesystem::path& path,
                                              const InputFormat& format = {});

struct Interaction {
  int user;
  int item;
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// One user's deduplicated history in file order. `timestamps` is either empty
// or parallel to `items`.
struct UserHistory {
  std::vector<int> items;
  std::vector<std::int64_t> timestamps;
};

struct Split {
  std::vector<std::vector<int>> train_pos;  // sorted ascending
  std::vector<int> val_item;
  std::vector<int> test_item;
};

// With timestamps the latest item is held out for test and the second latest
// for validation; equal timestamps order by ascending item index. Without
// timestamps both are drawn uniformly from the user's items.
Split leave_one_out_split(std::span<const UserHistory> histories, std::uint64_t seed);

struct Dataset {
  int n = 0;
  int m = 0;
  std::vector<std::vector<int>> train_pos;
  std::vector<int> val_item;
  std::vector<int> test_item;
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;
  std::unordered_map<std::string, int> user_index;
  std::unordered_map<std::string, int> item_index;
  int min_ratings = 1;
  std::uint64_t split_seed = 0;
  bool timestamped = false;

  bool is_train_positive(int u, int i) const;
  std::vector<Interaction> train_interactions() const;
  std::vector<Interaction> test_interactions() const;
  std::size_t train_size() const;
  // Train interactions plus the two held-out items per user.
  std::size_t interaction_count() const { return train_size() + 2 * static_cast<std::size_t>(n); }
  double sparsity() const;
};

// Users with fewer than `min_ratings` deduplicated interactions are dropped in
// a single pass before splitting. Users and items are indexed in order of
// first appearance among the surviving rows.
Dataset build_dataset(std::span<const RawInteraction> rows, int min_ratings,
                      std::uint64_t split_seed = 0);

// Assembles a dataset directly from indexed parts (tests, synthetic data).
Dataset make_dataset(int n, int m, Split split);

void save_split_json(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace bd
