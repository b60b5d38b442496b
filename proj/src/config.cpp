#include "fhc/config.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fhc/io.hpp"

namespace fhc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

using Section = std::map<std::string, std::string>;
using Tree = std::map<std::string, Section>;

Tree parse_tree(const std::string& text) {
  Tree tree;
  std::string section;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string line = trim(text.substr(pos, nl == std::string::npos ? nl : nl - pos));
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("config line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      tree[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("config line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty())
      fail("config line " + std::to_string(lineno) + ": key outside any [section]");
    tree[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return tree;
}

const std::string* find(const Tree& t, const std::string& sec, const std::string& key) {
  const auto si = t.find(sec);
  if (si == t.end()) return nullptr;
  const auto ki = si->second.find(key);
  return ki == si->second.end() ? nullptr : &ki->second;
}

double to_double(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) fail(where + ": trailing characters in number '" + v + "'");
    return d;
  } catch (const std::invalid_argument&) {
    fail(where + ": not a number: '" + v + "'");
  } catch (const std::out_of_range&) {
    fail(where + ": number out of range: '" + v + "'");
  }
}

long to_int(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) fail(where + ": trailing characters in integer '" + v + "'");
    return d;
  } catch (const std::invalid_argument&) {
    fail(where + ": not an integer: '" + v + "'");
  } catch (const std::out_of_range&) {
    fail(where + ": integer out of range: '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  fail(where + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const auto comma = v.find(',', pos);
    out.push_back(trim(v.substr(pos, comma == std::string::npos ? comma : comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

std::vector<double> to_double_list(const std::string& v, const std::string& where) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(item, where));
  return out;
}

Box parse_box(const std::string& item, int dim, const std::string& where) {
  std::vector<double> parts;
  std::size_t pos = 0;
  while (pos <= item.size()) {
    const auto colon = item.find(':', pos);
    parts.push_back(
        to_double(trim(item.substr(pos, colon == std::string::npos ? colon : colon - pos)), where));
    if (colon == std::string::npos) break;
    pos = colon + 1;
  }
  Box b;
  if (dim == 1) {
    if (parts.size() != 2) fail(where + ": 1d W component needs lo:hi, got '" + item + "'");
    b.lo = {parts[0], 0};
    b.hi = {parts[1], 0};
  } else {
    if (parts.size() != 4)
      fail(where + ": 2d W component needs lox:hix:loy:hiy, got '" + item + "'");
    b.lo = {parts[0], parts[2]};
    b.hi = {parts[1], parts[3]};
  }
  return b;
}

} // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  cfg.raw_text = text;
  Tree t = parse_tree(text);

  if (const auto* v = find(t, "grid", "dim")) cfg.dim = int(to_int(*v, "grid.dim"));
  if (const auto* v = find(t, "grid", "half_width"))
    cfg.half_width = to_double(*v, "grid.half_width");
  if (const auto* v = find(t, "grid", "points")) cfg.points = int(to_int(*v, "grid.points"));
  if (const auto* v = find(t, "time", "steps")) cfg.time_steps = int(to_int(*v, "time.steps"));

  if (const auto* v = find(t, "operator", "s")) cfg.s = to_double(*v, "operator.s");
  if (const auto* v = find(t, "operator", "equation")) {
    if (*v == "heat")
      cfg.equation = Equation::Heat;
    else if (*v == "wave")
      cfg.equation = Equation::Wave;
    else
      fail("operator.equation: expected heat or wave, got '" + *v + "'");
  }

  if (const auto* v = find(t, "regions", "w")) {
    cfg.has_regions = true;
    for (const auto& item : split_list(*v))
      cfg.w_boxes.push_back(parse_box(item, cfg.dim, "regions.w"));
    if (cfg.w_boxes.empty()) fail("regions.w: no components given");
  }

  if (const auto* v = find(t, "target", "profile")) cfg.target_profile = *v;
  if (const auto* v = find(t, "target", "amplitude"))
    cfg.target_amplitude = to_double(*v, "target.amplitude");
  if (const auto* v = find(t, "target", "mode")) cfg.target_mode = int(to_int(*v, "target.mode"));
  if (const auto* v = find(t, "target", "csv_path")) cfg.target_csv = *v;
  if (const auto* v = find(t, "target", "h10")) cfg.target_csv_h10 = to_bool(*v, "target.h10");
  if (const auto* v = find(t, "target", "h20")) cfg.target_csv_h20 = to_bool(*v, "target.h20");
  if (const auto* v = find(t, "target", "epsilon")) cfg.epsilon = to_double(*v, "target.epsilon");
  if (const auto* v = find(t, "target", "epsilon_list"))
    cfg.epsilon_list = to_double_list(*v, "target.epsilon_list");

  if (const auto* v = find(t, "optimizer", "max_iterations"))
    cfg.opt.max_iterations = int(to_int(*v, "optimizer.max_iterations"));
  if (const auto* v = find(t, "optimizer", "stop_tolerance"))
    cfg.opt.stop_tolerance = to_double(*v, "optimizer.stop_tolerance");
  if (const auto* v = find(t, "optimizer", "power_iterations"))
    cfg.opt.power_iterations = int(to_int(*v, "optimizer.power_iterations"));
  if (const auto* v = find(t, "optimizer", "check_interval"))
    cfg.opt.check_interval = int(to_int(*v, "optimizer.check_interval"));

  if (t.count("extension")) cfg.has_extension = true;
  if (const auto* v = find(t, "extension", "height"))
    cfg.strip_height = to_double(*v, "extension.height");
  if (const auto* v = find(t, "extension", "levels"))
    cfg.strip_levels = int(to_int(*v, "extension.levels"));
  if (const auto* v = find(t, "extension", "gamma"))
    cfg.strip_gamma = to_double(*v, "extension.gamma");
  if (const auto* v = find(t, "extension", "delta_list"))
    cfg.delta_list = to_double_list(*v, "extension.delta_list");
  if (const auto* v = find(t, "extension", "ell")) cfg.ell = to_double(*v, "extension.ell");
  if (const auto* v = find(t, "extension", "delta"))
    cfg.aux_delta = to_double(*v, "extension.delta");
  if (const auto* v = find(t, "extension", "draws"))
    cfg.draws = int(to_int(*v, "extension.draws"));

  if (const auto* v = find(t, "output", "directory")) cfg.output_dir = *v;
  if (const auto* v = find(t, "output", "dump_matrix"))
    cfg.dump_matrix = to_bool(*v, "output.dump_matrix");
  if (const auto* v = find(t, "rng", "seed"))
    cfg.seed = std::uint64_t(to_int(*v, "rng.seed"));
  cfg.opt.seed = cfg.seed;

  // cheap structural checks that do not depend on the subcommand
  if (cfg.dim != 1 && cfg.dim != 2) fail("grid.dim must be 1 or 2");
  if (cfg.s <= 0 || cfg.s >= 1) fail("operator.s must lie in (0,1)");
  if (cfg.half_width <= 1) fail("grid.half_width must exceed 1");
  if (cfg.points < 17 || cfg.points % 2 == 0) fail("grid.points must be odd and at least 17");
  if (cfg.time_steps < 2) fail("time.steps must be at least 2");
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

void validate_for_operator(const ExperimentConfig&) {
  // grid/operator fields were already checked structurally; W is unused here
}

static void need_regions(const ExperimentConfig& cfg) {
  if (!cfg.has_regions) fail("regions.w is required for this command");
}

void validate_for_control(const ExperimentConfig& cfg) {
  need_regions(cfg);
  if (cfg.epsilon < 0) fail("target.epsilon is required for the control command");
  if (cfg.epsilon == 0) fail("target.epsilon must be positive");
  if (cfg.target_profile == "csv" && cfg.target_csv.empty())
    fail("target.csv_path is required when target.profile = csv");
  if (cfg.equation == Equation::Wave) {
    const bool h20 = cfg.target_profile == "cos2" || cfg.target_profile == "modal" ||
                     (cfg.target_profile == "csv" && cfg.target_csv_h20);
    if (!h20)
      fail("equation = wave needs a target vanishing to second order at the mask edge "
           "and t = +-1 (profiles cos2/modal, or csv with h20 = true)");
  }
}

void validate_for_sweep(const ExperimentConfig& cfg) {
  need_regions(cfg);
  if (cfg.epsilon_list.empty()) fail("target.epsilon_list is required for the sweep command");
  for (std::size_t i = 0; i + 1 < cfg.epsilon_list.size(); ++i)
    if (cfg.epsilon_list[i + 1] >= cfg.epsilon_list[i])
      fail("target.epsilon_list must be strictly decreasing");
  if (cfg.equation == Equation::Wave) {
    ExperimentConfig probe = cfg;
    probe.epsilon = cfg.epsilon_list.front();
    validate_for_control(probe);
  }
}

void validate_for_gramian(const ExperimentConfig& cfg) { need_regions(cfg); }

void validate_for_extension_check(const ExperimentConfig& cfg) {
  if (cfg.dim != 1) fail("extension commands support dim = 1 only");
}

void validate_for_smallness(const ExperimentConfig& cfg) {
  need_regions(cfg);
  validate_for_extension_check(cfg);
  if (cfg.delta_list.empty()) fail("extension.delta_list is required for the smallness command");
  for (double d : cfg.delta_list)
    if (d <= 0 || d >= 1) fail("extension.delta_list entries must lie in (0,1)");
  if (cfg.ell <= 0 || cfg.ell > 1) fail("extension.ell must lie in (0,1]");
  if (cfg.draws < 1) fail("extension.draws must be at least 1");
}

double default_strip_height(const ExperimentConfig& cfg, const Grid& grid) {
  return cfg.strip_height > 0 ? cfg.strip_height : 2 * grid.half_width;
}

int default_strip_levels(const ExperimentConfig& cfg, const Grid& grid) {
  if (cfg.strip_levels > 0) return cfg.strip_levels;
  const double y1_cap = grid.hx * grid.hx;
  const double height = default_strip_height(cfg, grid);
  return int(std::ceil(std::pow(height / y1_cap, 1.0 / cfg.strip_gamma))) + 1;
}

TargetBundle build_target(const ExperimentConfig& cfg, const FracOperator& op,
                          const RegionPartition& part, const TimeGrid& tg) {
  if (cfg.target_profile == "cos2")
    return target_cos2(part, tg, cfg.target_amplitude);
  if (cfg.target_profile == "modal")
    return target_modal(op, part, tg, cfg.target_mode, cfg.target_amplitude);
  if (cfg.target_profile == "reachable")
    return target_reachable(op, part, tg, cfg.equation, cfg.target_amplitude);
  if (cfg.target_profile == "csv") {
    TargetBundle b;
    b.field = read_field_csv(cfg.target_csv, part.grid, tg);
    for (int node = 0; node < part.grid.num_nodes(); ++node)
      if (part.label[node] != NodeLabel::Interior)
        for (int k = 0; k < tg.levels(); ++k)
          if (b.field.values(k, node) != 0)
            fail("target csv has nonzero values outside the interior mask");
    b.h10 = cfg.target_csv_h10;
    b.h20 = cfg.target_csv_h20;
    return b;
  }
  fail("target.profile must be one of cos2, modal, reachable, csv (got '" +
       cfg.target_profile + "')");
}

} // namespace fhc
