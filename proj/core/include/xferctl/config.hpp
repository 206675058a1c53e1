#pragma once

#include <Eigen/Dense>
#include <string>

#include "xferctl/harness.hpp"

namespace xferctl::cfg {

// Sectioned key-value experiment config. Parsing starts from the per-system,
// per-family defaults and applies overrides; unknown sections or keys are
// rejected with a nearest-match suggestion. emit_config produces the
// canonical form: every key explicit, fixed order, shortest round-trip
// numbers — parse(emit(cfg)) is the identity and emit is a fixpoint.
harness::ExperimentConfig parse_config_text(const std::string& text);
harness::ExperimentConfig parse_config(const std::string& path);
std::string emit_config(const harness::ExperimentConfig& cfg);

// FNV-1a over the canonical emission, hex-encoded; stable under key
// reordering in the input file.
std::string config_hash(const harness::ExperimentConfig& cfg);

// Matrix/vector value syntax used inside configs and CLI flags:
//   "diag v"          uniform diagonal (broadcast to n)
//   "diag v1 ... vn"  diagonal
//   "rows a b ; c d"  full matrix, rows separated by ';'
//   "const v"         uniform vector
//   "vec v1 ... vn"   full vector
Eigen::MatrixXd parse_matrix_spec(const std::string& spec, int n);
std::string emit_matrix_spec(const Eigen::MatrixXd& m);
Eigen::VectorXd parse_vector_spec(const std::string& spec, int n);
std::string emit_vector_spec(const Eigen::VectorXd& v);

}  // namespace xferctl::cfg
