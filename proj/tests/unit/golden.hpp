#pragma once

#include <string>
#include <vector>

#include "corpus.hpp"
#include "helpers.hpp"

// Fixed inputs behind the files in tests/golden.
namespace golden {

inline mmsrarec::corpus::Item shoe() {
  return {"g1", "Trail Runner Shoe", "Lightweight shoe for rocky trails.", "blue shoe on rocks"};
}

inline mmsrarec::corpus::Item stove() {
  return {"g2", "Camp Stove", "Compact gas stove.", "steel stove"};
}

inline std::vector<std::string> user_keywords() { return {"running", "trail", "outdoor"}; }
inline std::vector<std::string> neighbor_keywords() { return {"hiking", "boots"}; }
inline std::vector<std::string> item_keywords() { return {"blue shoe", "trail", "lightweight"}; }

inline std::string file(const std::string& name) {
  return testing::read_text(std::string(MMSR_GOLDEN_DIR) + "/" + name);
}

}  // namespace golden
