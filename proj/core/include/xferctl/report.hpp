#pragma once

#include <string>
#include <vector>

#include "xferctl/harness.hpp"

namespace xferctl::harness {

// Machine-readable report (stable key order, shortest round-trip numbers).
std::string report_to_json(const TransferReport& report);

// Human-readable aligned-column summary.
std::string report_to_text(const TransferReport& report);

// Long-format learning curves, one row per (variant, seed, iteration);
// timeline_steps offsets fine-tuning curves past the fault occurrence.
std::string curves_to_csv(const TransferReport& report);

// Combined table across systems, one row per (system, variant).
std::string table_to_csv(const std::string& preset,
                         const std::vector<TransferReport>& reports);
std::string table_to_json(const std::string& preset,
                          const std::vector<TransferReport>& reports);

}  // namespace xferctl::harness
