#include "lantern/tape.hpp"

#include "lantern/errors.hpp"

namespace lantern::ad {

void Tape::backward(Tensor loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ValidationError("backward: loss must be scalar, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  // Intermediates (entry outputs) are per-pass accumulators; leaves persist.
  for (auto& e : entries_) e.output.zero_grad();
  loss.mutable_grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward_fn();
  }
}

}  // namespace lantern::ad
