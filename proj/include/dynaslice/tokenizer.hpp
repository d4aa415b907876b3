#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dynaslice {

// Byte-level tokenizer: one token per byte, ids 0..255. Lossless on any
// UTF-8 input, no vocabulary file to manage.
inline std::vector<int> encode(const std::string& text) {
  std::vector<int> tokens;
  tokens.reserve(text.size());
  for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
  return tokens;
}

inline std::string decode(const std::vector<int>& tokens) {
  std::string text;
  text.reserve(tokens.size());
  for (int t : tokens) text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  return text;
}

}  // namespace dynaslice
