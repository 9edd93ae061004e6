#include "epicon/baselines.hpp"

#include <algorithm>

#include "epicon/errors.hpp"

namespace epicon {

namespace {

std::vector<std::string> common_columns(const std::vector<SampledTrajectory>& trajs) {
  std::vector<std::string> cols;
  for (const auto& name : trajs.front().names) {
    bool everywhere = true;
    for (const auto& traj : trajs) {
      if (!traj.has_column(name)) {
        everywhere = false;
        break;
      }
    }
    if (everywhere) cols.push_back(name);
  }
  return cols;
}

void check_common_grid(const std::vector<SampledTrajectory>& trajs) {
  if (trajs.empty()) throw ContractViolation("baseline: need J >= 1 trajectories");
  const Eigen::VectorXd& g0 = trajs.front().grid;
  for (const auto& traj : trajs) {
    if (traj.grid.size() != g0.size() || (traj.grid - g0).lpNorm<Eigen::Infinity>() > 0.0) {
      throw ContractViolation("baseline: trajectories must share a common grid");
    }
  }
}

}  // namespace

SampledTrajectory pointwise_mean(const std::vector<SampledTrajectory>& trajs) {
  check_common_grid(trajs);
  SampledTrajectory out;
  out.grid = trajs.front().grid;
  out.names = common_columns(trajs);
  for (const auto& name : out.names) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(out.grid.size());
    for (const auto& traj : trajs) acc += traj.column(name);
    out.columns.push_back(acc / static_cast<double>(trajs.size()));
  }
  return out;
}

SampledTrajectory pointwise_median(const std::vector<SampledTrajectory>& trajs) {
  check_common_grid(trajs);
  SampledTrajectory out;
  out.grid = trajs.front().grid;
  out.names = common_columns(trajs);
  const std::size_t J = trajs.size();
  std::vector<double> buf(J);
  for (const auto& name : out.names) {
    Eigen::VectorXd med(out.grid.size());
    for (Eigen::Index m = 0; m < out.grid.size(); ++m) {
      for (std::size_t j = 0; j < J; ++j) buf[j] = trajs[j].column(name)(m);
      // Lower median: element at index (J-1)/2 of the sorted values.
      const std::size_t idx = (J - 1) / 2;
      std::nth_element(buf.begin(), buf.begin() + idx, buf.end());
      med(m) = buf[idx];
    }
    out.columns.push_back(med);
  }
  return out;
}

}  // namespace epicon
