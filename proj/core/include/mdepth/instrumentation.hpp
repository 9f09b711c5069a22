#pragma once

#include <atomic>
#include <cstdint>

namespace mdepth {

/// Process-wide event counters used to verify which loss paths ran.
struct Counters {
  std::atomic<std::uint64_t> views_synthesized{0};
  std::atomic<std::uint64_t> pseudo_label_reads{0};

  void reset() {
    views_synthesized = 0;
    pseudo_label_reads = 0;
  }
};

Counters& counters();

}  // namespace mdepth
