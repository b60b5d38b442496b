#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fhc/control.hpp"

namespace fhc {

// Line-oriented config: [section] headers, key = value pairs, # comments.
// Values keep their raw text until a typed getter pulls them, so error
// messages can name the exact section.key that failed.
struct ExperimentConfig {
  int dim = 1;
  double half_width = 4;
  int points = 129;
  int time_steps = 32;
  double s = 0.5;
  Equation equation = Equation::Heat;

  bool has_regions = false;
  std::vector<Box> w_boxes;

  std::string target_profile = "cos2";
  double target_amplitude = 1.0;
  int target_mode = 0;
  std::string target_csv;
  bool target_csv_h10 = false;
  bool target_csv_h20 = false;
  double epsilon = -1; // < 0 means absent
  std::vector<double> epsilon_list;

  OptimizerSettings opt;

  bool has_extension = false;
  double strip_height = -1; // default 2L when absent
  int strip_levels = -1;    // default from the y1 <= hx^2 rule
  double strip_gamma = 2;
  std::vector<double> delta_list;
  double ell = 1.0;
  double aux_delta = -1; // < 0: use the reference scale
  int draws = 10;

  std::string output_dir = "out";
  bool dump_matrix = false;
  std::uint64_t seed = 20260823ull;

  std::string raw_text; // verbatim file contents, hashed into manifests
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// per-command precondition checks; throw std::invalid_argument naming the key
void validate_for_operator(const ExperimentConfig& cfg);
void validate_for_control(const ExperimentConfig& cfg);
void validate_for_sweep(const ExperimentConfig& cfg);
void validate_for_gramian(const ExperimentConfig& cfg);
void validate_for_extension_check(const ExperimentConfig& cfg);
void validate_for_smallness(const ExperimentConfig& cfg);

// strip defaults resolved against the grid (height 2L, levels from the
// grading rule) when the config leaves them out
int default_strip_levels(const ExperimentConfig& cfg, const Grid& grid);
double default_strip_height(const ExperimentConfig& cfg, const Grid& grid);

TargetBundle build_target(const ExperimentConfig& cfg, const FracOperator& op,
                          const RegionPartition& part, const TimeGrid& tg);

} // namespace fhc
