#pragma once

#include <memory>
#include <string>
#include <vector>

namespace pcc {

// One named parameter buffer. Declaration order across a model is the
// serialization order, and `is_bias` controls L2 exclusion.
struct Param {
  std::string name;
  std::vector<size_t> shape;
  std::shared_ptr<std::vector<double>> value;
  bool is_bias = false;

  size_t size() const {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }
};

}  // namespace pcc
