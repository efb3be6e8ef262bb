#pragma once

#include <string>
#include <vector>

#include "ssmkit/hankel.hpp"
#include "ssmkit/net.hpp"

namespace ssmkit::io {

// CSV schemas are fixed; numeric cells use %.17g so re-reading them
// reproduces the doubles exactly and identical runs produce identical files.

// layer,index,sigma,cumulative_energy_fraction (index is 1-based within the
// layer; energy is the running sum of sigmas over the layer total).
void write_hsv_csv(const std::string& path, const HsvReport& report);

// epoch,train_loss,ce,reg,eval_acc,wall_time_s
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);

struct CertRow {
  int layer = 0;
  Eigen::Index r = 0;
  double tail_sum = 0.0;        // sum of truncated Hankel values
  double bound_constant = 0.0;  // 2 * tail_sum: output-error bound per unit input energy
};

// layer,r,tail_sum,bound_constant
void write_certificate_csv(const std::string& path, const std::vector<CertRow>& rows);

// One log-scale polyline per layer (sigma vs index), self-contained SVG.
void write_hsv_svg(const std::string& path, const HsvReport& report);

}  // namespace ssmkit::io
