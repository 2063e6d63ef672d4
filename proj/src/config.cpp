// SPDX-License-Identifier: Apache-2.0

#include "tschain/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "tschain/text.hpp"

namespace tschain {

namespace {

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const auto x = parse_u64(v);
  if (!x) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return *x;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_real(const std::string& key, const std::string& v) {
  const auto x = parse_double(v);
  if (!x || !std::isfinite(*x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return *x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> to_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  if (trim(v).empty() || v == "none") return out;
  for (const auto& f : split_fields(v)) out.push_back(parse(key, std::string(trim(f))));
  return out;
}

std::string list_text(const std::vector<std::size_t>& xs) {
  if (xs.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

void add_train_keys(std::vector<std::pair<std::string, Setter>>& keys, const std::string& prefix,
                    TrainConfig ExperimentConfig::*outer, TrainConfig ChainConfig::*inner) {
  const auto target = [outer, inner](ExperimentConfig& c) -> TrainConfig& {
    return outer ? c.*outer : c.chain.*inner;
  };
  keys.emplace_back(prefix + "learning_rate", [target](auto& c, auto& k, auto& v) {
    target(c).learning_rate = to_real(k, v);
  });
  keys.emplace_back(prefix + "batch_size",
                    [target](auto& c, auto& k, auto& v) { target(c).batch_size = to_size(k, v); });
  keys.emplace_back(prefix + "steps_per_epoch", [target](auto& c, auto& k, auto& v) {
    target(c).steps_per_epoch = to_size(k, v);
  });
  keys.emplace_back(prefix + "max_epochs",
                    [target](auto& c, auto& k, auto& v) { target(c).max_epochs = to_size(k, v); });
  keys.emplace_back(prefix + "patience",
                    [target](auto& c, auto& k, auto& v) { target(c).patience = to_size(k, v); });
}

// Application order matters: general keys, then train.*, then the copy into
// the chain phases, then chain.pretrain.* / chain.finetune.*.
const std::vector<std::pair<std::string, Setter>>& base_keys() {
  static const auto keys = [] {
    std::vector<std::pair<std::string, Setter>> k;
    k.emplace_back("seed", [](auto& c, auto& key, auto& v) { c.seed = to_u64(key, v); });
    k.emplace_back("runs", [](auto& c, auto& key, auto& v) { c.runs = to_size(key, v); });
    k.emplace_back("jobs", [](auto& c, auto& key, auto& v) { c.jobs = to_size(key, v); });
    k.emplace_back("out", [](auto& c, auto&, auto& v) { c.out = v; });
    k.emplace_back("fractions", [](auto& c, auto& key, auto& v) {
      c.fractions = to_list<double>(key, v, to_real);
    });
    k.emplace_back("data.source", [](auto& c, auto& key, auto& v) {
      if (v == "synthetic")
        c.data.kind = DataSource::Kind::synthetic;
      else if (v == "files")
        c.data.kind = DataSource::Kind::files;
      else
        throw ConfigError(key + ": expected 'synthetic' or 'files', got '" + v + "'");
    });
    k.emplace_back("data.classes",
                   [](auto& c, auto& key, auto& v) { c.data.synthetic.classes = to_size(key, v); });
    k.emplace_back("data.per_class", [](auto& c, auto& key, auto& v) {
      c.data.synthetic.per_class = to_size(key, v);
    });
    k.emplace_back("data.dim",
                   [](auto& c, auto& key, auto& v) { c.data.synthetic.dim = to_size(key, v); });
    k.emplace_back("data.spread",
                   [](auto& c, auto& key, auto& v) { c.data.synthetic.spread = to_real(key, v); });
    k.emplace_back("data.seed",
                   [](auto& c, auto& key, auto& v) { c.data.synthetic.seed = to_u64(key, v); });
    k.emplace_back("data.train", [](auto& c, auto&, auto& v) { c.data.train = v; });
    k.emplace_back("data.validation", [](auto& c, auto&, auto& v) { c.data.validation = v; });
    k.emplace_back("data.test", [](auto& c, auto&, auto& v) { c.data.test = v; });
    k.emplace_back("split.early_stop_fraction",
                   [](auto& c, auto& key, auto& v) { c.early_stop_fraction = to_real(key, v); });
    k.emplace_back("split.balance_labelled",
                   [](auto& c, auto& key, auto& v) { c.balance_labelled = to_bool(key, v); });
    k.emplace_back("arch.hidden", [](auto& c, auto& key, auto& v) {
      c.arch.hidden = to_list<std::size_t>(key, v, to_size);
    });
    add_train_keys(k, "train.", &ExperimentConfig::train, nullptr);
    k.emplace_back("chain.iterations",
                   [](auto& c, auto& key, auto& v) { c.chain.iterations = to_size(key, v); });
    k.emplace_back("chain.k", [](auto& c, auto& key, auto& v) {
      if (v == "inf")
        c.chain.distill.k.reset();
      else
        c.chain.distill.k = to_size(key, v);
    });
    k.emplace_back("chain.k_pool_fraction", [](auto& c, auto& key, auto& v) {
      if (v == "none")
        c.k_pool_fraction.reset();
      else
        c.k_pool_fraction = to_real(key, v);
    });
    k.emplace_back("chain.p", [](auto& c, auto& key, auto& v) {
      if (v == "all")
        c.chain.distill.p.reset();
      else
        c.chain.distill.p = to_size(key, v);
    });
    k.emplace_back("chain.fresh_init", [](auto& c, auto& key, auto& v) {
      c.chain.fresh_init_per_student = to_bool(key, v);
    });
    k.emplace_back("chain.with_baseline",
                   [](auto& c, auto& key, auto& v) { c.chain_with_baseline = to_bool(key, v); });
    k.emplace_back("output.pseudo_labels",
                   [](auto& c, auto& key, auto& v) { c.dump_pseudo_labels = to_bool(key, v); });
    return k;
  }();
  return keys;
}

const std::vector<std::pair<std::string, Setter>>& phase_keys() {
  static const auto keys = [] {
    std::vector<std::pair<std::string, Setter>> k;
    add_train_keys(k, "chain.pretrain.", nullptr, &ChainConfig::pretrain);
    add_train_keys(k, "chain.finetune.", nullptr, &ChainConfig::finetune);
    return k;
  }();
  return keys;
}

}  // namespace

const std::vector<std::string>& known_setting_keys() {
  static const auto keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : base_keys()) out.push_back(k);
    for (const auto& [k, _] : phase_keys()) out.push_back(k);
    return out;
  }();
  return keys;
}

Settings parse_settings(const std::string& text, const std::string& origin) {
  Settings s;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    s[key] = std::string(trim(body.substr(eq + 1)));
  }
  return s;
}

Settings load_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_settings(buf.str(), path.string());
}

ExperimentConfig build_config(const Settings& settings) {
  const auto& known = known_setting_keys();
  for (const auto& [k, _] : settings)
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("unknown setting '" + k + "'");

  ExperimentConfig cfg;
  cfg.data.synthetic.seed = cfg.seed;
  bool data_seed_set = false;
  for (const auto& [key, setter] : base_keys()) {
    const auto it = settings.find(key);
    if (it == settings.end()) continue;
    setter(cfg, key, it->second);
    if (key == "data.seed") data_seed_set = true;
  }
  if (!data_seed_set) cfg.data.synthetic.seed = cfg.seed;
  cfg.chain.pretrain = cfg.train;
  cfg.chain.finetune = cfg.train;
  for (const auto& [key, setter] : phase_keys()) {
    const auto it = settings.find(key);
    if (it != settings.end()) setter(cfg, key, it->second);
  }
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  try {
    if (runs == 0) throw ConfigError("runs must be at least 1");
    if (jobs == 0) throw ConfigError("jobs must be at least 1");
    if (fractions.empty()) throw ConfigError("fractions must not be empty");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
        throw ConfigError("fractions must lie in (0, 1]");
      if (i > 0 && !(fractions[i] > fractions[i - 1]))
        throw ConfigError("fractions must be strictly increasing");
    }
    if (!(early_stop_fraction >= 0.0 && early_stop_fraction < 1.0))
      throw ConfigError("split.early_stop_fraction must lie in [0, 1)");
    if (k_pool_fraction && !(*k_pool_fraction > 0.0 && *k_pool_fraction <= 1.0))
      throw ConfigError("chain.k_pool_fraction must lie in (0, 1]");
    for (auto h : arch.hidden)
      if (h == 0) throw ConfigError("arch.hidden widths must be positive");
    if (data.kind == DataSource::Kind::synthetic) {
      if (data.synthetic.classes < 2) throw ConfigError("data.classes must be at least 2");
      if (data.synthetic.per_class < 10) throw ConfigError("data.per_class must be at least 10");
      if (data.synthetic.dim == 0) throw ConfigError("data.dim must be positive");
      if (!(data.synthetic.spread > 0.0)) throw ConfigError("data.spread must be positive");
    } else if (data.train.empty() || data.validation.empty() || data.test.empty()) {
      throw ConfigError("data.source = files needs data.train, data.validation and data.test");
    }
    train.validate();
    if (chain.iterations == 0) throw ConfigError("chain.iterations must be at least 1");
    chain.pretrain.validate();
    chain.finetune.validate();
    if (chain.distill.k && *chain.distill.k == 0) throw ConfigError("chain.k must be positive");
    if (chain.distill.p && *chain.distill.p == 0) throw ConfigError("chain.p must be positive");
    if (data.kind == DataSource::Kind::synthetic) chain.distill.validate(data.synthetic.classes);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string describe_config(const ExperimentConfig& cfg) {
  std::ostringstream o;
  const auto train = [&](const std::string& prefix, const TrainConfig& t) {
    o << prefix << "learning_rate = " << format_double(t.learning_rate) << '\n'
      << prefix << "batch_size = " << t.batch_size << '\n'
      << prefix << "steps_per_epoch = " << t.steps_per_epoch << '\n'
      << prefix << "max_epochs = " << t.max_epochs << '\n'
      << prefix << "patience = " << t.patience << '\n';
  };
  o << "seed = " << cfg.seed << '\n' << "runs = " << cfg.runs << '\n' << "fractions = ";
  for (std::size_t i = 0; i < cfg.fractions.size(); ++i)
    o << (i ? "," : "") << format_double(cfg.fractions[i]);
  o << '\n';
  if (cfg.data.kind == DataSource::Kind::synthetic) {
    o << "data.source = synthetic\n"
      << "data.classes = " << cfg.data.synthetic.classes << '\n'
      << "data.per_class = " << cfg.data.synthetic.per_class << '\n'
      << "data.dim = " << cfg.data.synthetic.dim << '\n'
      << "data.spread = " << format_double(cfg.data.synthetic.spread) << '\n'
      << "data.seed = " << cfg.data.synthetic.seed << '\n';
  } else {
    o << "data.source = files\n"
      << "data.train = " << cfg.data.train.string() << '\n'
      << "data.validation = " << cfg.data.validation.string() << '\n'
      << "data.test = " << cfg.data.test.string() << '\n';
  }
  o << "split.early_stop_fraction = " << format_double(cfg.early_stop_fraction) << '\n'
    << "split.balance_labelled = " << (cfg.balance_labelled ? "true" : "false") << '\n'
    << "arch.hidden = " << list_text(cfg.arch.hidden) << '\n';
  train("train.", cfg.train);
  o << "chain.iterations = " << cfg.chain.iterations << '\n'
    << "chain.k = " << (cfg.chain.distill.k ? std::to_string(*cfg.chain.distill.k) : "inf") << '\n'
    << "chain.k_pool_fraction = "
    << (cfg.k_pool_fraction ? format_double(*cfg.k_pool_fraction) : "none") << '\n'
    << "chain.p = " << (cfg.chain.distill.p ? std::to_string(*cfg.chain.distill.p) : "all") << '\n'
    << "chain.fresh_init = " << (cfg.chain.fresh_init_per_student ? "true" : "false") << '\n'
    << "chain.with_baseline = " << (cfg.chain_with_baseline ? "true" : "false") << '\n';
  train("chain.pretrain.", cfg.chain.pretrain);
  train("chain.finetune.", cfg.chain.finetune);
  o << "output.pseudo_labels = " << (cfg.dump_pseudo_labels ? "true" : "false") << '\n'
    << "# init = uniform-fan-in (random init, no pretrained weights)\n";
  return o.str();
}

}  // namespace tschain
