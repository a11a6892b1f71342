#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace befunet {

// Error taxonomy. Shape/dimension problems and bad configuration are caught
// at call boundaries; contract violations indicate caller bugs.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Counts forward multiply-accumulate operations. Matmul-like ops add
// m*n*k, convolutions add out_h*out_w*kh*kw*cin*cout, elementwise
// multiplies add n. Additions, activations and normalizations add 0.
struct OpCounter {
  std::uint64_t multiply_adds = 0;
  void add(std::uint64_t n) { multiply_adds += n; }
};

template <typename T>
class Tape;

// Optional instrumentation: attention layers deposit their post-softmax
// probability matrices here when a probe is attached to the context.
template <typename T>
struct AttnRecord {
  std::string tag;
  int rows = 0;
  int cols = 0;
  std::vector<T> probs;  // row-major [rows, cols]
};

template <typename T>
struct AttnProbe {
  std::vector<AttnRecord<T>> records;
};

// Execution context threaded through every op. A null tape disables
// gradient recording; a null counter disables op counting.
template <typename T>
struct Ctx {
  Tape<T>* tape = nullptr;
  OpCounter* counter = nullptr;
  AttnProbe<T>* probe = nullptr;
};

}  // namespace befunet
