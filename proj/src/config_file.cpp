#include "hyperimts/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hyperimts {

bool RunConfig::operator==(const RunConfig& other) const {
  return write_run_config(*this) == write_run_config(other);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, std::size_t line_no) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": invalid number '" + v + "'");
  }
}

long long parse_int(const std::string& v, std::size_t line_no) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": invalid integer '" + v + "'");
  }
}

bool parse_bool(const std::string& v, std::size_t line_no) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ParseError("line " + std::to_string(line_no) + ": expected true or false, got '" +
                   v + "'");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& v, std::size_t line_no) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    seeds.push_back(static_cast<std::uint64_t>(parse_int(item, line_no)));
  }
  if (seeds.empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": empty seed list");
  }
  return seeds;
}

// nlohmann's double formatting is shortest-round-trip, which keeps the
// canonical writer byte-stable.
std::string format_double(double v) { return nlohmann::json(v).dump(); }

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));

    if (key == "dataset") cfg.dataset = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "split_seed") cfg.split_seed = static_cast<std::uint64_t>(parse_int(value, line_no));
    else if (key == "normalize") cfg.normalize_data = parse_bool(value, line_no);
    else if (key == "lookback_fraction") cfg.train.lookback_fraction = parse_double(value, line_no);
    else if (key == "forecast_timestamps") cfg.train.forecast_timestamps = static_cast<int>(parse_int(value, line_no));
    else if (key == "p_obs") cfg.model.p_obs = static_cast<int>(parse_int(value, line_no));
    else if (key == "p_time") cfg.model.p_time = static_cast<int>(parse_int(value, line_no));
    else if (key == "p_var") cfg.model.p_var = static_cast<int>(parse_int(value, line_no));
    else if (key == "heads") cfg.model.heads = static_cast<int>(parse_int(value, line_no));
    else if (key == "layers") cfg.model.layers = static_cast<int>(parse_int(value, line_no));
    else if (key == "delta_init") cfg.model.delta_init = parse_double(value, line_no);
    else if (key == "time_scale") cfg.model.time_scale = parse_double(value, line_no);
    else if (key == "ablation") {
      try {
        cfg.model.ablation = ablation_from_string(value);
      } catch (const ConfigError& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    else if (key == "lr0") cfg.train.lr0 = parse_double(value, line_no);
    else if (key == "max_epochs") cfg.train.max_epochs = static_cast<int>(parse_int(value, line_no));
    else if (key == "patience") cfg.train.patience = static_cast<int>(parse_int(value, line_no));
    else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(value, line_no));
    else if (key == "seeds") cfg.train.seeds = parse_seed_list(value, line_no);
    else if (key == "report_denormalized") cfg.train.report_denormalized = parse_bool(value, line_no);
    else {
      throw ParseError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_run_config(buffer.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string write_run_config(const RunConfig& config) {
  std::ostringstream os;
  os << "dataset = " << config.dataset << "\n";
  os << "out = " << config.out_dir << "\n";
  os << "split_seed = " << config.split_seed << "\n";
  os << "normalize = " << (config.normalize_data ? "true" : "false") << "\n";
  os << "lookback_fraction = " << format_double(config.train.lookback_fraction) << "\n";
  os << "forecast_timestamps = " << config.train.forecast_timestamps << "\n";
  os << "p_obs = " << config.model.p_obs << "\n";
  os << "p_time = " << config.model.p_time << "\n";
  os << "p_var = " << config.model.p_var << "\n";
  os << "heads = " << config.model.heads << "\n";
  os << "layers = " << config.model.layers << "\n";
  os << "delta_init = " << format_double(config.model.delta_init) << "\n";
  os << "time_scale = " << format_double(config.model.time_scale) << "\n";
  os << "ablation = " << to_string(config.model.ablation) << "\n";
  os << "lr0 = " << format_double(config.train.lr0) << "\n";
  os << "max_epochs = " << config.train.max_epochs << "\n";
  os << "patience = " << config.train.patience << "\n";
  os << "batch_size = " << config.train.batch_size << "\n";
  os << "seeds = ";
  for (std::size_t i = 0; i < config.train.seeds.size(); ++i) {
    if (i) os << ",";
    os << config.train.seeds[i];
  }
  os << "\n";
  os << "report_denormalized = " << (config.train.report_denormalized ? "true" : "false")
     << "\n";
  return os.str();
}

}  // namespace hyperimts
