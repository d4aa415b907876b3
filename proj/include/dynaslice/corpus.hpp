#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "dynaslice/io.hpp"
#include "dynaslice/rng.hpp"
#include "dynaslice/tokenizer.hpp"

namespace dynaslice {

inline std::vector<int> load_corpus(const std::string& path) {
  return encode(read_file(path));
}

// Deterministic English-like filler with strong bigram structure: each word
// has a preferred successor (followed ~70% of the time), so a byte model a
// few hundred steps in can pick up both spellings and transitions.
inline std::string make_toy_text(std::uint64_t seed, std::size_t n_bytes) {
  static constexpr std::array<const char*, 32> kWords = {
      "the",   "stone",  "river",  "turns",  "under",  "old",    "light",
      "falls", "slowly", "near",   "garden", "walls",  "while",  "birds",
      "sing",  "over",   "quiet",  "fields", "wind",   "moves",  "through",
      "tall",  "grass",  "and",    "rain",   "drifts", "past",   "low",
      "hills", "toward", "grey",   "sea"};

  Rng rng(seed);
  std::string out;
  out.reserve(n_bytes + 16);
  std::size_t word = rng.index(kWords.size());
  std::size_t sentence_left = 5 + rng.index(7);
  while (out.size() < n_bytes) {
    out += kWords[word];
    if (--sentence_left == 0) {
      out += ". ";
      sentence_left = 5 + rng.index(7);
      word = rng.index(kWords.size());
    } else {
      out += ' ';
      if (rng.uniform() < 0.7)
        word = (word * 7 + 3) % kWords.size();  // fixed successor cycle
      else
        word = rng.index(kWords.size());
    }
  }
  out.resize(n_bytes);
  return out;
}

// Toy text interleaved with digit/uppercase/punctuation runs, so the byte
// vocabulary reaches well past typical residual widths. Calibration corpora
// need this: the first block's inputs are raw embedding rows, and their Gram
// is rank-deficient unless enough distinct bytes appear.
inline std::string make_diverse_text(std::uint64_t seed, std::size_t n_bytes) {
  static constexpr const char* kCharsets[] = {
      "0123456789",
      "ABCDEFGHIJKLMNOPQRSTUVWXYZ",
      "()[]{}<>+-*/=_#%&@!?,;:'\"",
  };
  Rng rng(seed);
  std::string out;
  out.reserve(n_bytes + 64);
  while (out.size() < n_bytes) {
    out += make_toy_text(rng.next_u64(), 48 + rng.index(48));
    out += ' ';
    for (int i = 0; i < 10; ++i) {
      const char* cs = kCharsets[rng.index(3)];
      const std::size_t len = std::char_traits<char>::length(cs);
      out += cs[rng.index(len)];
    }
    out += ' ';
  }
  out.resize(n_bytes);
  return out;
}

}  // namespace dynaslice
