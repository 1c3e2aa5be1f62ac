#include "l2l/learned_optimizer.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace l2l {

static_assert(std::endian::native == std::endian::little,
              "optimizer payload is written in host order and must be little-endian");

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::kPlain: return "plain";
    case Architecture::kGac: return "gac";
    case Architecture::kNtmBfgs: return "ntm-bfgs";
    case Architecture::kNtmLbfgs: return "ntm-lbfgs";
  }
  return "unknown";
}

std::optional<Architecture> parse_architecture(std::string_view name) {
  if (name == "plain") return Architecture::kPlain;
  if (name == "gac") return Architecture::kGac;
  if (name == "ntm-bfgs") return Architecture::kNtmBfgs;
  if (name == "ntm-lbfgs") return Architecture::kNtmLbfgs;
  return std::nullopt;
}

std::string_view to_string(Grouping grouping) {
  return grouping == Grouping::kSingle ? "single" : "by-kind";
}

std::optional<Grouping> parse_grouping(std::string_view name) {
  if (name == "single") return Grouping::kSingle;
  if (name == "by-kind") return Grouping::kByKind;
  return std::nullopt;
}

void LearnedOptimizer::validate() const {
  if (group_names.empty() || params.size() != group_names.size())
    throw ContractViolation("LearnedOptimizer: need exactly one parameter set per group");
  if (grouping == Grouping::kSingle && group_names.size() != 1)
    throw ContractViolation("LearnedOptimizer: single grouping takes one group");
  if (uses_memory()) {
    if (params.size() != 1)
      throw ContractViolation("LearnedOptimizer: memory architectures use a single controller");
    controller().validate();
    return;
  }
  for (const auto& p : params) {
    p.validate();
    if (p.extra_inputs != 0)
      throw ContractViolation("LearnedOptimizer: extra inputs are reserved for memory reads");
    gac.validate(p.n_hidden());
  }
  if (architecture == Architecture::kPlain && !gac.empty())
    throw ContractViolation("LearnedOptimizer: averaging cells need the gac architecture");
}

ParameterGroupSpec LearnedOptimizer::resolve_groups(const Problem& problem) const {
  if (grouping == Grouping::kSingle) return ParameterGroupSpec::single(problem.dim(), group_names[0]);
  return ParameterGroupSpec::from_kinds(problem.coordinate_kinds(), group_names);
}

NtmController LearnedOptimizer::controller() const {
  if (params.empty()) throw ContractViolation("LearnedOptimizer: no controller parameters");
  return {params[0], gac, ntm, heads};
}

Vector LearnedOptimizer::trainable_flat() const {
  std::size_t total = 0;
  for (const auto& p : params) total += p.parameter_count();
  Vector flat(static_cast<Eigen::Index>(total));
  Eigen::Index at = 0;
  for (const auto& p : params) {
    const Vector part = p.to_flat();
    flat.segment(at, part.size()) = part;
    at += part.size();
  }
  return flat;
}

void LearnedOptimizer::assign_trainable(const Vector& flat) {
  Eigen::Index at = 0;
  for (auto& p : params) {
    const auto size = static_cast<Eigen::Index>(p.parameter_count());
    if (at + size > flat.size()) throw ContractViolation("assign_trainable: vector too short");
    p.assign_flat(flat.segment(at, size));
    at += size;
  }
  if (at != flat.size()) throw ContractViolation("assign_trainable: vector too long");
}

namespace {

bool bit_equal(const double* a, const double* b, Eigen::Index n) {
  return std::memcmp(a, b, static_cast<std::size_t>(n) * sizeof(double)) == 0;
}

bool same_params(const LstmOptimizerParams& a, const LstmOptimizerParams& b) {
  if (a.input_mode != b.input_mode || a.extra_inputs != b.extra_inputs ||
      a.parameter_count() != b.parameter_count() || a.n_hidden() != b.n_hidden())
    return false;
  const double meta_a[] = {a.output_scale, a.input_scale, a.preprocess_p};
  const double meta_b[] = {b.output_scale, b.input_scale, b.preprocess_p};
  if (!bit_equal(meta_a, meta_b, 3)) return false;
  const Vector fa = a.to_flat();
  const Vector fb = b.to_flat();
  return bit_equal(fa.data(), fb.data(), fa.size());
}

}  // namespace

bool LearnedOptimizer::operator==(const LearnedOptimizer& o) const {
  if (architecture != o.architecture || grouping != o.grouping || group_names != o.group_names ||
      params.size() != o.params.size() || gac.layer1_cells != o.gac.layer1_cells ||
      gac.layer2_cells != o.gac.layer2_cells)
    return false;
  for (std::size_t g = 0; g < params.size(); ++g)
    if (!same_params(params[g], o.params[g])) return false;
  if (!uses_memory()) return true;
  return ntm.read_heads == o.ntm.read_heads && ntm.write_heads == o.ntm.write_heads &&
         bit_equal(&ntm.memory_init, &o.ntm.memory_init, 1) &&
         ntm.history_len == o.ntm.history_len && heads.weights.size() == o.heads.weights.size() &&
         bit_equal(heads.weights.data(), o.heads.weights.data(), heads.weights.size()) &&
         heads.bias.size() == o.heads.bias.size() &&
         bit_equal(heads.bias.data(), o.heads.bias.data(), heads.bias.size());
}

LearnedOptimizer make_learned_optimizer(const LearnedOptimizerOptions& options,
                                        const RngStream& rng) {
  LearnedOptimizer opt;
  opt.architecture = options.architecture;
  opt.grouping = options.grouping;
  opt.group_names = options.group_names;
  opt.gac = options.gac;
  opt.ntm = options.ntm;
  InitOptions init = options.init;
  if (opt.uses_memory()) {
    init.extra_inputs = options.ntm.read_heads;
    opt.group_names.resize(1);
  }
  for (std::size_t g = 0; g < opt.group_names.size(); ++g) {
    RngStream stream = rng.substream(g);
    opt.params.push_back(init_optimizer_params(stream, init));
  }
  if (opt.uses_memory()) opt.heads = NtmHeadParams::zeros(opt.ntm, init.n_hidden);
  opt.validate();
  return opt;
}

RuleState initial_rule_state(const LearnedOptimizer& opt, const ParameterGroupSpec& groups) {
  RuleState state;
  if (opt.uses_memory()) {
    state.ntm = ntm_initial_state(opt.controller(), groups.dim,
                                  opt.architecture == Architecture::kNtmLbfgs);
  } else {
    state.banks = zero_banks(groups, opt.params);
  }
  return state;
}

Vector learned_step(const LearnedOptimizer& opt, const ParameterGroupSpec& groups,
                    const Vector& grad, RuleState& state, std::vector<StackTape>* tapes) {
  if (!grad.allFinite()) throw DivergenceError("learned optimizer: non-finite gradient");
  if (static_cast<std::size_t>(grad.size()) != groups.dim)
    throw ContractViolation("learned_step: gradient dimension mismatch");

  Vector update;
  if (opt.uses_memory()) {
    if (tapes != nullptr)
      throw ContractViolation("learned_step: memory architectures have no taped step");
    update = ntm_bfgs_step(opt.controller(), grad, *state.ntm);
  } else {
    const GacSpec* gac = opt.architecture == Architecture::kGac ? &opt.gac : nullptr;
    if (tapes != nullptr) tapes->assign(groups.groups.size(), StackTape{});
    update.resize(grad.size());
    for (std::size_t g = 0; g < groups.groups.size(); ++g) {
      const auto& idx = groups.groups[g].indices;
      if (idx.empty()) continue;
      Vector local(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j)
        local[static_cast<Eigen::Index>(j)] = grad[static_cast<Eigen::Index>(idx[j])];
      const auto& phi = opt.params[g];
      advance_layers(phi, encode_inputs(phi, local), state.banks[g], gac,
                     tapes ? &(*tapes)[g] : nullptr);
      const Vector out = project_output(phi, state.banks[g].h2);
      for (std::size_t j = 0; j < idx.size(); ++j)
        update[static_cast<Eigen::Index>(idx[j])] = out[static_cast<Eigen::Index>(j)];
    }
  }
  if (!update.allFinite()) throw DivergenceError("learned optimizer: non-finite update");
  return update;
}

// ---------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& token) {
  double v = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw FormatError("optimizer file: bad number '" + token + "'");
  return v;
}

std::size_t parse_count(const std::string& token) {
  std::size_t v = 0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw FormatError("optimizer file: bad count '" + token + "'");
  return v;
}

std::string join_cells(const std::vector<std::size_t>& cells) {
  if (cells.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + std::to_string(cells[i]);
  return s;
}

std::vector<std::size_t> split_cells(const std::string& token) {
  std::vector<std::size_t> cells;
  if (token == "-") return cells;
  std::stringstream ss(token);
  std::string part;
  while (std::getline(ss, part, ',')) cells.push_back(parse_count(part));
  return cells;
}

std::vector<std::string> read_fields(std::istream& in, const std::string& key,
                                     std::size_t n_values) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("optimizer file: missing '" + key + "' line");
  std::stringstream ss(line);
  std::vector<std::string> fields;
  std::string tok;
  while (ss >> tok) fields.push_back(tok);
  if (fields.empty() || fields[0] != key)
    throw FormatError("optimizer file: expected '" + key + "', found '" + line + "'");
  if (fields.size() != n_values + 1)
    throw FormatError("optimizer file: '" + key + "' expects " + std::to_string(n_values) +
                      " values");
  fields.erase(fields.begin());
  return fields;
}

void append(std::vector<double>& out, const double* data, Eigen::Index n) {
  out.insert(out.end(), data, data + n);
}

}  // namespace

void save_optimizer(const LearnedOptimizer& opt, std::ostream& out) {
  opt.validate();
  out << kOptimizerMagic << ' ' << kOptimizerFormatVersion << '\n';
  out << "architecture " << to_string(opt.architecture) << '\n';
  out << "grouping " << to_string(opt.grouping) << '\n';
  out << "groups " << opt.group_names.size() << '\n';
  out << "gac " << join_cells(opt.gac.layer1_cells) << ' ' << join_cells(opt.gac.layer2_cells)
      << '\n';
  out << "ntm " << opt.ntm.read_heads << ' ' << opt.ntm.write_heads << ' '
      << format_double(opt.ntm.memory_init) << ' ' << opt.ntm.history_len << '\n';

  std::vector<double> payload;
  for (std::size_t g = 0; g < opt.params.size(); ++g) {
    const auto& p = opt.params[g];
    out << "group " << opt.group_names[g] << ' ' << to_string(p.input_mode) << ' '
        << p.n_hidden() << ' ' << p.extra_inputs << ' ' << format_double(p.output_scale) << ' '
        << format_double(p.input_scale) << ' ' << format_double(p.preprocess_p) << '\n';
    const Vector flat = p.to_flat();
    append(payload, flat.data(), flat.size());
  }
  if (opt.uses_memory()) {
    append(payload, opt.heads.weights.data(), opt.heads.weights.size());
    append(payload, opt.heads.bias.data(), opt.heads.bias.size());
  }
  out << "payload " << payload.size() << '\n';
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!out) throw FormatError("optimizer file: write failed");
}

LearnedOptimizer load_optimizer(std::istream& in) {
  const auto magic = read_fields(in, kOptimizerMagic, 1);
  if (parse_count(magic[0]) != static_cast<std::size_t>(kOptimizerFormatVersion))
    throw FormatError("optimizer file: unsupported version " + magic[0]);

  LearnedOptimizer opt;
  opt.group_names.clear();
  const auto arch = parse_architecture(read_fields(in, "architecture", 1)[0]);
  if (!arch) throw FormatError("optimizer file: unknown architecture");
  opt.architecture = *arch;
  const auto grouping = parse_grouping(read_fields(in, "grouping", 1)[0]);
  if (!grouping) throw FormatError("optimizer file: unknown grouping");
  opt.grouping = *grouping;
  const std::size_t n_groups = parse_count(read_fields(in, "groups", 1)[0]);
  const auto gac = read_fields(in, "gac", 2);
  opt.gac.layer1_cells = split_cells(gac[0]);
  opt.gac.layer2_cells = split_cells(gac[1]);
  const auto ntm = read_fields(in, "ntm", 4);
  opt.ntm.read_heads = parse_count(ntm[0]);
  opt.ntm.write_heads = parse_count(ntm[1]);
  opt.ntm.memory_init = parse_double(ntm[2]);
  opt.ntm.history_len = parse_count(ntm[3]);

  for (std::size_t g = 0; g < n_groups; ++g) {
    const auto f = read_fields(in, "group", 7);
    opt.group_names.push_back(f[0]);
    const auto mode = parse_input_mode(f[1]);
    if (!mode) throw FormatError("optimizer file: unknown input mode '" + f[1] + "'");
    LstmOptimizerParams p;
    p.input_mode = *mode;
    const std::size_t h = parse_count(f[2]);
    p.extra_inputs = parse_count(f[3]);
    p.output_scale = parse_double(f[4]);
    p.input_scale = parse_double(f[5]);
    p.preprocess_p = parse_double(f[6]);
    if (h == 0) throw FormatError("optimizer file: n_hidden must be >= 1");
    p.layer1 = LstmLayerParams::zeros(p.input_width(), h);
    p.layer2 = LstmLayerParams::zeros(h, h);
    p.output_weights = Vector::Zero(static_cast<Eigen::Index>(h));
    opt.params.push_back(std::move(p));
  }
  if (opt.uses_memory() && !opt.params.empty())
    opt.heads = NtmHeadParams::zeros(opt.ntm, opt.params[0].n_hidden());

  const std::size_t count = parse_count(read_fields(in, "payload", 1)[0]);
  std::size_t expected = 0;
  for (const auto& p : opt.params) expected += p.parameter_count();
  if (opt.uses_memory())
    expected += static_cast<std::size_t>(opt.heads.weights.size() + opt.heads.bias.size());
  if (count != expected)
    throw FormatError("optimizer file: payload has " + std::to_string(count) +
                      " values, header implies " + std::to_string(expected));
  std::vector<double> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw FormatError("optimizer file: truncated payload");

  std::size_t at = 0;
  for (auto& p : opt.params) {
    const auto n = static_cast<Eigen::Index>(p.parameter_count());
    p.assign_flat(Eigen::Map<const Vector>(payload.data() + at, n));
    at += static_cast<std::size_t>(n);
  }
  if (opt.uses_memory()) {
    std::memcpy(opt.heads.weights.data(), payload.data() + at,
                static_cast<std::size_t>(opt.heads.weights.size()) * sizeof(double));
    at += static_cast<std::size_t>(opt.heads.weights.size());
    std::memcpy(opt.heads.bias.data(), payload.data() + at,
                static_cast<std::size_t>(opt.heads.bias.size()) * sizeof(double));
  }
  try {
    opt.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("optimizer file: ") + e.what());
  }
  return opt;
}

void save_optimizer_file(const LearnedOptimizer& opt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  save_optimizer(opt, out);
}

LearnedOptimizer load_optimizer_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open optimizer file: " + path);
  return load_optimizer(in);
}

}  // namespace l2l
