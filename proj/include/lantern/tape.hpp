#pragma once

#include <functional>
#include <vector>

#include "lantern/tensor.hpp"

namespace lantern::ad {

// Ordered record of primitive applications. Operations append an entry when
// the tape is recording and some input requires a gradient; backward()
// replays the entries in reverse. Intermediate gradients are zeroed at the
// start of each backward pass, leaf gradients are not: running backward
// twice without zeroing the leaves doubles them.
//
// A Tape must not be mutated from two threads.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  void record(Tensor output, std::function<void()> backward_fn) {
    entries_.push_back({std::move(output), std::move(backward_fn)});
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  // Throws ValidationError if loss is not scalar.
  void backward(Tensor loss);

  void reset() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;
  bool recording_;
};

}  // namespace lantern::ad
