#include "seqrec/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace seqrec {

namespace {

struct KeyBinding {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("invalid integer for " + key + ": " + v);
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("invalid unsigned integer for " + key + ": " + v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for " + key + ": " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": " + v);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(parse_int(key, part));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

#define INT_KEY(name, field)                                              \
  {name, [](const ExperimentConfig& c) { return std::to_string(c.field); }, \
   [](ExperimentConfig& c, const std::string& v) {                        \
     c.field = parse_int(name, v);                                        \
   }}
#define DBL_KEY(name, field)                                            \
  {name, [](const ExperimentConfig& c) { return fmt_double(c.field); }, \
   [](ExperimentConfig& c, const std::string& v) {                      \
     c.field = parse_double(name, v);                                   \
   }}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> kBindings = {
      {"data.dir", [](const ExperimentConfig& c) { return c.dataset_dir; },
       [](ExperimentConfig& c, const std::string& v) { c.dataset_dir = v; }},
      INT_KEY("model.dim", model.dim),
      INT_KEY("model.heads", model.heads),
      INT_KEY("model.blocks", model.blocks),
      INT_KEY("model.max_len", model.max_len),
      DBL_KEY("model.dropout", model.dropout),
      DBL_KEY("sampler.mask_ratio", sampler.mask_ratio),
      INT_KEY("sampler.seg_max", sampler.seg_max),
      DBL_KEY("loss.aap_weight", weights.aap),
      DBL_KEY("loss.mip_weight", weights.mip),
      DBL_KEY("loss.map_weight", weights.map),
      DBL_KEY("loss.sp_weight", weights.sp),
      INT_KEY("loss.n_neg_item", sampler.n_neg_item),
      INT_KEY("loss.n_neg_attr", sampler.n_neg_attr),
      INT_KEY("loss.n_neg_seg", sampler.n_neg_seg),
      {"loss.raw_bilinear",
       [](const ExperimentConfig& c) {
         return c.raw_bilinear ? std::string("true") : std::string("false");
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.raw_bilinear = parse_bool("loss.raw_bilinear", v);
       }},
      INT_KEY("train.pretrain_epochs", train.pretrain_epochs),
      INT_KEY("train.pretrain_batch", train.pretrain_batch),
      INT_KEY("train.finetune_epochs", train.finetune_epochs),
      INT_KEY("train.finetune_batch", train.finetune_batch),
      DBL_KEY("train.lr", train.lr),
      DBL_KEY("train.beta1", train.beta1),
      DBL_KEY("train.beta2", train.beta2),
      DBL_KEY("train.eps", train.eps),
      DBL_KEY("train.grad_clip", train.grad_clip),
      {"train.seed",
       [](const ExperimentConfig& c) { return std::to_string(c.train.seed); },
       [](ExperimentConfig& c, const std::string& v) {
         c.train.seed = parse_u64("train.seed", v);
       }},
      INT_KEY("train.patience", train.patience),
      DBL_KEY("train.train_fraction", train.train_fraction),
      INT_KEY("train.checkpoint_interval", train.checkpoint_interval),
      INT_KEY("eval.n_negatives", eval.n_negatives),
      {"eval.k_values",
       [](const ExperimentConfig& c) { return fmt_int_list(c.eval.k_values); },
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.k_values = parse_int_list("eval.k_values", v);
       }},
      {"eval.seed",
       [](const ExperimentConfig& c) { return std::to_string(c.eval.seed); },
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.seed = parse_u64("eval.seed", v);
       }},
      {"eval.target",
       [](const ExperimentConfig& c) {
         return c.eval.target == EvalTarget::test ? std::string("test")
                                                  : std::string("valid");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "test")
           c.eval.target = EvalTarget::test;
         else if (v == "valid")
           c.eval.target = EvalTarget::valid;
         else
           throw ConfigError("eval.target must be test or valid");
       }},
      {"eval.scope",
       [](const ExperimentConfig& c) {
         return c.eval.scope == CandidateScope::sampled ? std::string("sampled")
                                                        : std::string("full");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "sampled")
           c.eval.scope = CandidateScope::sampled;
         else if (v == "full")
           c.eval.scope = CandidateScope::full;
         else
           throw ConfigError("eval.scope must be sampled or full");
       }},
  };
  return kBindings;
}

#undef INT_KEY
#undef DBL_KEY

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& b : bindings()) {
    if (b.key == key) {
      b.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  for (const auto& b : bindings()) os << b.key << '=' << b.get(*this) << "\n";
  return os.str();
}

void ExperimentConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("missing '=' at " + path.string() + ":" +
                        std::to_string(line_no));
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void ExperimentConfig::save_file(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << serialize();
}

}  // namespace seqrec
