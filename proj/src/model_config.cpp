#include "earfa/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace earfa {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::light: return "light";
    case Variant::custom: return "custom";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "light") return Variant::light;
  if (s == "custom") return Variant::custom;
  throw ConfigError("unknown variant '" + s + "' (expected full, light or custom)", "variant");
}

ModelConfig ModelConfig::earfa(int scale) {
  ModelConfig c;
  c.scale = scale;
  c.variant = Variant::full;
  c.n_dabs = 12;
  c.k_dw = 5;
  c.k_ddw = 7;
  c.dilation = 3;
  c.k_sgfn = 5;
  c.r_c = 8;
  c.width = 96;
  c.sgfn_ratio = 2.0;
  return c;
}

ModelConfig ModelConfig::earfa_light(int scale) {
  ModelConfig c;
  c.scale = scale;
  c.variant = Variant::light;
  c.n_dabs = 8;
  c.k_dw = 3;
  c.k_ddw = 5;
  c.dilation = 3;
  c.k_sgfn = 3;
  c.r_c = 8;
  c.width = 48;
  c.sgfn_ratio = 8.0 / 3.0;
  return c;
}

ModelConfig ModelConfig::tiny(int scale) {
  ModelConfig c = earfa_light(scale);
  c.variant = Variant::custom;
  c.n_dabs = 2;
  c.width = 16;
  c.sgfn_ratio = 2.0;
  return c;
}

int ModelConfig::sgfn_hidden() const { return static_cast<int>(std::lround(sgfn_ratio * width)); }

BlockConfig ModelConfig::block() const {
  BlockConfig b;
  b.channels = width;
  b.compression = r_c;
  b.k_dw = k_dw;
  b.k_ddw = k_ddw;
  b.dilation = dilation;
  b.k_sgfn = k_sgfn;
  b.hidden = sgfn_hidden();
  b.spatial = spatial;
  b.channel = channel;
  return b;
}

void ModelConfig::validate() const {
  if (scale < 2 || scale > 4) throw ConfigError("scale must be 2, 3 or 4", "scale");
  if (n_dabs < 1) throw ConfigError("n_dabs must be >= 1", "n_dabs");
  if (!(sgfn_ratio > 0)) throw ConfigError("sgfn_ratio must be positive", "sgfn_ratio");
  if (std::abs(sgfn_ratio * width - sgfn_hidden()) > 1e-6) {
    throw ConfigError("sgfn_ratio * width must be an integer", "sgfn_ratio");
  }
  auto fixed = [](int have, int want, const char* key, const char* variant) {
    if (have != want) {
      throw ConfigError(std::string(key) + " of the " + variant + " variant is fixed at " + std::to_string(want),
                        key);
    }
  };
  if (variant == Variant::full) {
    fixed(n_dabs, 12, "n_dabs", "full");
    fixed(k_dw, 5, "k_dw", "full");
    fixed(k_ddw, 7, "k_ddw", "full");
    fixed(dilation, 3, "dilation", "full");
    fixed(k_sgfn, 5, "k_sgfn", "full");
    fixed(r_c, 8, "r_c", "full");
  } else if (variant == Variant::light) {
    fixed(n_dabs, 8, "n_dabs", "light");
    fixed(k_dw, 3, "k_dw", "light");
    fixed(k_ddw, 5, "k_ddw", "light");
    fixed(dilation, 3, "dilation", "light");
    fixed(k_sgfn, 3, "k_sgfn", "light");
    fixed(r_c, 8, "r_c", "light");
  }
  block().validate();
}

std::string ModelConfig::canonical() const {
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%.17g", sgfn_ratio);
  std::ostringstream os;
  os << "variant=" << to_string(variant) << "\n"
     << "scale=" << scale << "\n"
     << "n_dabs=" << n_dabs << "\n"
     << "width=" << width << "\n"
     << "r_c=" << r_c << "\n"
     << "k_dw=" << k_dw << "\n"
     << "k_ddw=" << k_ddw << "\n"
     << "dilation=" << dilation << "\n"
     << "k_sgfn=" << k_sgfn << "\n"
     << "sgfn_ratio=" << ratio << "\n"
     << "spatial=" << to_string(spatial) << "\n"
     << "channel=" << to_string(channel) << "\n";
  return os.str();
}

std::uint64_t ModelConfig::hash() const {
  // FNV-1a, 64-bit
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + key + "' expects an integer, got '" + v + "'", key);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  // Accept a/b fractions so ratios like 8/3 can be written exactly.
  const auto slash = v.find('/');
  if (slash != std::string::npos) {
    return parse_real(key, trim(v.substr(0, slash))) / parse_real(key, trim(v.substr(slash + 1)));
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'", key);
  }
}

}  // namespace

ModelConfig parse_model_config(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value", t);
    }
    const std::string key = trim(t.substr(0, eq));
    if (kv.count(key)) throw ConfigError("duplicate key '" + key + "'", key);
    kv[key] = trim(t.substr(eq + 1));
  }

  int scale = 4;
  if (auto it = kv.find("scale"); it != kv.end()) scale = parse_int("scale", it->second);
  Variant variant = Variant::full;
  if (auto it = kv.find("variant"); it != kv.end()) variant = parse_variant(it->second);
  ModelConfig cfg = variant == Variant::light ? ModelConfig::earfa_light(scale) : ModelConfig::earfa(scale);
  cfg.variant = variant;

  for (const auto& [key, value] : kv) {
    if (key == "scale" || key == "variant") continue;
    if (key == "n_dabs") cfg.n_dabs = parse_int(key, value);
    else if (key == "width") cfg.width = parse_int(key, value);
    else if (key == "r_c") cfg.r_c = parse_int(key, value);
    else if (key == "k_dw") cfg.k_dw = parse_int(key, value);
    else if (key == "k_ddw") cfg.k_ddw = parse_int(key, value);
    else if (key == "dilation") cfg.dilation = parse_int(key, value);
    else if (key == "k_sgfn") cfg.k_sgfn = parse_int(key, value);
    else if (key == "sgfn_ratio") cfg.sgfn_ratio = parse_real(key, value);
    else if (key == "spatial") cfg.spatial = parse_spatial_attention(value);
    else if (key == "channel") cfg.channel = parse_channel_attention(value);
    else throw ConfigError("unknown config key '" + key + "'", key);
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

void save_model_config(const ModelConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config '" + path.string() + "'");
  out << cfg.canonical();
}

}  // namespace earfa
