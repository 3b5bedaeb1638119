#include "bd/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "bd/rng.hpp"

namespace bd {
namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && ptr == s.data() + s.size()) return v;
  double dv = 0.0;
  auto [dptr, dec] = std::from_chars(s.data(), s.data() + s.size(), dv);
  if (dec == std::errc() && dptr == s.data() + s.size()) return static_cast<std::int64_t>(dv);
  return std::nullopt;
}

bool is_number(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

void validate_columns(const std::string& columns) {
  if (columns.size() < 2 || columns.find('u') == std::string::npos ||
      columns.find('i') == std::string::npos)
    throw DataError("column layout '" + columns + "' must name both 'u' and 'i'");
  for (char c : columns) {
    if (c != 'u' && c != 'i' && c != 'r' && c != 't')
      throw DataError("unknown column code '" + std::string(1, c) + "' in layout '" + columns + "'");
    if (std::count(columns.begin(), columns.end(), c) > 1)
      throw DataError("column code '" + std::string(1, c) + "' repeated in layout '" + columns + "'");
  }
}

// Numeric columns that fail to parse on the first line mark it as a header.
bool looks_like_header(const std::vector<std::string_view>& fields, const std::string& columns) {
  for (std::size_t k = 0; k < fields.size() && k < columns.size(); ++k) {
    if ((columns[k] == 'r' || columns[k] == 't') && !is_number(trim(fields[k]))) return true;
  }
  return false;
}

struct PairHash {
  std::size_t operator()(const std::pair<std::string, std::string>& p) const {
    const std::size_t h1 = std::hash<std::string>{}(p.first);
    const std::size_t h2 = std::hash<std::string>{}(p.second);
    return h1 ^ (h2 + 0x9e3779b97f4a7c15ULL + (h1 << 6) + (h1 >> 2));
  }
};

// Keeps the first occurrence's position and the earliest timestamp.
std::vector<RawInteraction> deduplicate(std::vector<RawInteraction> rows) {
  std::unordered_map<std::pair<std::string, std::string>, std::size_t, PairHash> seen;
  std::vector<RawInteraction> out;
  out.reserve(rows.size());
  for (auto& row : rows) {
    auto key = std::make_pair(row.user_key, row.item_key);
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(std::move(key), out.size());
      out.push_back(std::move(row));
      continue;
    }
    auto& kept = out[it->second];
    if (row.timestamp && (!kept.timestamp || *row.timestamp < *kept.timestamp))
      kept.timestamp = row.timestamp;
  }
  return out;
}

}  // namespace

std::vector<RawInteraction> parse_interactions(std::istream& in, const InputFormat& format) {
  validate_columns(format.columns);
  const auto col_of = [&](char c) -> int {
    const auto pos = format.columns.find(c);
    return pos == std::string::npos ? -1 : static_cast<int>(pos);
  };
  const int user_col = col_of('u');
  const int item_col = col_of('i');
  const int ts_col = col_of('t');
  const int min_fields = std::max(user_col, item_col) + 1;

  std::vector<RawInteraction> rows;
  char delim = format.delimiter;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    if (delim == '\0') {
      if (view.find('\t') != std::string_view::npos) delim = '\t';
      else if (view.find(',') != std::string_view::npos) delim = ',';
      else throw DataError("line " + std::to_string(line_no) + ": cannot detect delimiter (expected tab or comma)");
    }
    const auto fields = split_fields(view, delim);
    if (first_content_line) {
      first_content_line = false;
      const bool header = format.header == HeaderMode::present ||
                          (format.header == HeaderMode::automatic && looks_like_header(fields, format.columns));
      if (header) continue;
    }
    if (static_cast<int>(fields.size()) < std::max(min_fields, 2))
      throw DataError("line " + std::to_string(line_no) + ": expected at least " +
                      std::to_string(std::max(min_fields, 2)) + " fields, found " +
                      std::to_string(fields.size()));
    RawInteraction row;
    row.user_key = std::string(trim(fields[user_col]));
    row.item_key = std::string(trim(fields[item_col]));
    if (row.user_key.empty() || row.item_key.empty())
      throw DataError("line " + std::to_string(line_no) + ": empty user or item key");
    if (ts_col >= 0 && ts_col < static_cast<int>(fields.size())) {
      auto ts = parse_timestamp(trim(fields[ts_col]));
      if (!ts)
        throw DataError("line " + std::to_string(line_no) + ": malformed timestamp '" +
                        std::string(trim(fields[ts_col])) + "'");
      row.timestamp = ts;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no interactions found (empty input)");
  return deduplicate(std::move(rows));
}

std::vector<RawInteraction> load_interactions(const std::filesystem::path& path,
                                              const InputFormat& format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file '" + path.string() + "'");
  try {
    return parse_interactions(in, format);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Split leave_one_out_split(std::span<const UserHistory> histories, std::uint64_t seed) {
  Split split;
  const std::size_t n = histories.size();
  split.train_pos.resize(n);
  split.val_item.resize(n);
  split.test_item.resize(n);
  Rng rng(seed);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& h = histories[u];
    const std::size_t k = h.items.size();
    if (k < 3)
      throw DataError("user " + std::to_string(u) + " has " + std::to_string(k) +
                      " interactions; at least 3 are needed to hold out validation and test items");
    std::size_t test_pos = 0;
    std::size_t val_pos = 0;
    if (!h.timestamps.empty()) {
      std::vector<std::size_t> order(k);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (h.timestamps[a] != h.timestamps[b]) return h.timestamps[a] < h.timestamps[b];
        return h.items[a] < h.items[b];
      });
      test_pos = order[k - 1];
      val_pos = order[k - 2];
    } else {
      test_pos = uniform_index(rng, k);
      val_pos = uniform_index(rng, k - 1);
      if (val_pos >= test_pos) ++val_pos;
    }
    split.test_item[u] = h.items[test_pos];
    split.val_item[u] = h.items[val_pos];
    auto& train = split.train_pos[u];
    train.reserve(k - 2);
    for (std::size_t j = 0; j < k; ++j)
      if (j != test_pos && j != val_pos) train.push_back(h.items[j]);
    std::sort(train.begin(), train.end());
  }
  return split;
}

bool Dataset::is_train_positive(int u, int i) const {
  const auto& pos = train_pos[u];
  return std::binary_search(pos.begin(), pos.end(), i);
}

std::vector<Interaction> Dataset::train_interactions() const {
  std::vector<Interaction> out;
  out.reserve(train_size());
  for (int u = 0; u < n; ++u)
    for (int i : train_pos[u]) out.push_back({u, i});
  return out;
}

std::vector<Interaction> Dataset::test_interactions() const {
  std::vector<Interaction> out;
  out.reserve(n);
  for (int u = 0; u < n; ++u) out.push_back({u, test_item[u]});
  return out;
}

std::size_t Dataset::train_size() const {
  std::size_t total = 0;
  for (const auto& p : train_pos) total += p.size();
  return total;
}

double Dataset::sparsity() const {
  return 1.0 - static_cast<double>(interaction_count()) /
                   (static_cast<double>(n) * static_cast<double>(m));
}

Dataset build_dataset(std::span<const RawInteraction> rows, int min_ratings,
                      std::uint64_t split_seed) {
  if (rows.empty()) throw DataError("cannot build a dataset from zero interactions");
  if (min_ratings < 1) throw DataError("min_ratings must be positive");
  auto unique = deduplicate(std::vector<RawInteraction>(rows.begin(), rows.end()));

  std::unordered_map<std::string, int> counts;
  for (const auto& r : unique) ++counts[r.user_key];

  Dataset ds;
  ds.min_ratings = min_ratings;
  ds.split_seed = split_seed;
  std::vector<UserHistory> histories;
  bool all_timestamped = true;
  for (const auto& r : unique) {
    if (counts[r.user_key] < min_ratings) continue;
    auto [uit, new_user] = ds.user_index.try_emplace(r.user_key, ds.n);
    if (new_user) {
      ds.user_keys.push_back(r.user_key);
      histories.emplace_back();
      ++ds.n;
    }
    auto [iit, new_item] = ds.item_index.try_emplace(r.item_key, ds.m);
    if (new_item) {
      ds.item_keys.push_back(r.item_key);
      ++ds.m;
    }
    auto& h = histories[uit->second];
    h.items.push_back(iit->second);
    h.timestamps.push_back(r.timestamp.value_or(0));
    all_timestamped = all_timestamped && r.timestamp.has_value();
  }
  if (ds.n == 0)
    throw DataError("no user has at least " + std::to_string(min_ratings) + " interactions");
  if (!all_timestamped)
    for (auto& h : histories) h.timestamps.clear();
  ds.timestamped = all_timestamped;

  Split split = leave_one_out_split(histories, split_seed);
  ds.train_pos = std::move(split.train_pos);
  ds.val_item = std::move(split.val_item);
  ds.test_item = std::move(split.test_item);
  return ds;
}

Dataset make_dataset(int n, int m, Split split) {
  if (static_cast<int>(split.train_pos.size()) != n || static_cast<int>(split.val_item.size()) != n ||
      static_cast<int>(split.test_item.size()) != n)
    throw DataError("split does not cover exactly n users");
  Dataset ds;
  ds.n = n;
  ds.m = m;
  for (int u = 0; u < n; ++u) {
    auto& pos = split.train_pos[u];
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    for (int i : pos)
      if (i < 0 || i >= m) throw DataError("item index out of range");
    const int v = split.val_item[u];
    const int t = split.test_item[u];
    if (v < 0 || v >= m || t < 0 || t >= m || v == t || std::binary_search(pos.begin(), pos.end(), v) ||
        std::binary_search(pos.begin(), pos.end(), t))
      throw DataError("invalid held-out items for user " + std::to_string(u));
    ds.user_keys.push_back(std::to_string(u));
    ds.user_index.emplace(ds.user_keys.back(), u);
  }
  for (int i = 0; i < m; ++i) {
    ds.item_keys.push_back(std::to_string(i));
    ds.item_index.emplace(ds.item_keys.back(), i);
  }
  ds.train_pos = std::move(split.train_pos);
  ds.val_item = std::move(split.val_item);
  ds.test_item = std::move(split.test_item);
  return ds;
}

void save_split_json(const Dataset& ds, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "bd-split";
  j["version"] = 1;
  j["seed"] = ds.split_seed;
  j["min_ratings"] = ds.min_ratings;
  j["timestamped"] = ds.timestamped;
  j["n"] = ds.n;
  j["m"] = ds.m;
  j["user_keys"] = ds.user_keys;
  j["item_keys"] = ds.item_keys;
  j["train_pos"] = ds.train_pos;
  j["val_item"] = ds.val_item;
  j["test_item"] = ds.test_item;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split snapshot '" + path.string() + "'");
  out << j.dump() << '\n';
}

}  // namespace bd
