#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "uld/error.hpp"

namespace uld {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

/// One extractive question-answer triple.
struct CorpusItem {
  std::string context;
  std::string question;
  std::string answer;
  Split split = Split::train;

  /// Text the model is conditioned on before the answer.
  [[nodiscard]] std::string prompt() const { return context + " " + question + " "; }

  friend bool operator==(const CorpusItem&, const CorpusItem&) = default;
};

/// Every character the generator can emit.
inline constexpr std::string_view kCorpusAlphabet = "abcdefghijklmnopqrstuvwxyz .?";

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::array<std::string_view, 12> kNames = {
    "ana", "ben", "cara", "dan", "eva", "finn", "gus", "ivy", "jon", "kim", "leo", "mia"};
inline constexpr std::array<std::string_view, 8> kColors = {
    "red", "blue", "green", "pink", "black", "white", "gray", "brown"};
inline constexpr std::array<std::string_view, 8> kObjects = {
    "cups", "hats", "books", "boxes", "pens", "keys", "socks", "balls"};
inline constexpr std::array<std::string_view, 8> kCounts = {
    "two", "three", "four", "five", "six", "seven", "eight", "nine"};

}  // namespace detail

/// Split assignment for item indices 0..n-1: indices ordered by a fixed hash,
/// the first 80% go to train, the next 10% to val, the rest to test.
inline std::vector<Split> assign_splits(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [](std::size_t a, std::size_t b) {
    const auto ha = detail::splitmix64(a);
    const auto hb = detail::splitmix64(b);
    return ha != hb ? ha < hb : a < b;
  });
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  std::vector<Split> out(n, Split::test);
  for (std::size_t r = 0; r < n; ++r) {
    out[order[r]] = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
  }
  return out;
}

/// Templated one-sentence inventory stories with a question whose answer is
/// the name, count or color mentioned in the story.
inline std::vector<CorpusItem> gen_corpus(std::uint64_t seed, std::size_t n_items) {
  if (n_items == 0) throw ParameterError("corpus needs at least one item");
  using namespace detail;
  std::mt19937_64 rng(seed);
  const auto splits = assign_splits(n_items);
  std::vector<CorpusItem> items;
  items.reserve(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    const std::string name(kNames[rng() % kNames.size()]);
    const std::string count(kCounts[rng() % kCounts.size()]);
    const std::string color(kColors[rng() % kColors.size()]);
    const std::string what(kObjects[rng() % kObjects.size()]);
    CorpusItem item;
    item.context = name + " has " + count + " " + color + " " + what + ".";
    switch (rng() % 3) {
      case 0:
        item.question = "what color are the " + what + "?";
        item.answer = color;
        break;
      case 1:
        item.question = "how many " + what + " are there?";
        item.answer = count;
        break;
      default:
        item.question = "who has the " + what + "?";
        item.answer = name;
        break;
    }
    item.split = splits[i];
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<CorpusItem> select_split(const std::vector<CorpusItem>& items, Split s) {
  std::vector<CorpusItem> out;
  for (const auto& it : items) {
    if (it.split == s) out.push_back(it);
  }
  return out;
}

inline void save_corpus(const std::filesystem::path& path, const std::vector<CorpusItem>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write corpus file " + path.string());
  for (const auto& it : items) {
    nlohmann::ordered_json j;
    j["context"] = it.context;
    j["question"] = it.question;
    j["answer"] = it.answer;
    j["split"] = to_string(it.split);
    out << j.dump() << '\n';
  }
}

inline std::vector<CorpusItem> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read corpus file " + path.string());
  std::vector<CorpusItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      items.push_back({j.at("context").get<std::string>(), j.at("question").get<std::string>(),
                       j.at("answer").get<std::string>(), parse_split(j.at("split").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

}  // namespace uld
