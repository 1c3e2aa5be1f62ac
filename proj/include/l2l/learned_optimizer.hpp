#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "l2l/gac.hpp"
#include "l2l/lstm_optimizer.hpp"
#include "l2l/memory.hpp"
#include "l2l/problem.hpp"

namespace l2l {

enum class Architecture { kPlain, kGac, kNtmBfgs, kNtmLbfgs };
enum class Grouping { kSingle, kByKind };

std::string_view to_string(Architecture arch);
std::optional<Architecture> parse_architecture(std::string_view name);
std::string_view to_string(Grouping grouping);
std::optional<Grouping> parse_grouping(std::string_view name);

// A complete learned update rule: architecture, parameter grouping and
// weights. This is the unit that gets meta-trained, serialized and
// evaluated.
struct LearnedOptimizer {
  Architecture architecture = Architecture::kPlain;
  Grouping grouping = Grouping::kSingle;
  // kSingle: one name; kByKind: coordinate kind labels, e.g. {"weight", "bias"}.
  std::vector<std::string> group_names{"all"};
  // One per group. For the memory architectures, params[0] is the controller.
  std::vector<LstmOptimizerParams> params;
  GacSpec gac;        // kGac and the memory architectures
  NtmConfig ntm;      // memory architectures only
  NtmHeadParams heads;

  void validate() const;
  bool uses_memory() const {
    return architecture == Architecture::kNtmBfgs || architecture == Architecture::kNtmLbfgs;
  }
  // Plain and averaging-cell optimizers have a meta-gradient.
  bool trainable() const { return !uses_memory(); }
  ParameterGroupSpec resolve_groups(const Problem& problem) const;
  NtmController controller() const;

  // Concatenated trainable weights of every group.
  Vector trainable_flat() const;
  void assign_trainable(const Vector& flat);

  bool operator==(const LearnedOptimizer& other) const;
};

struct LearnedOptimizerOptions {
  Architecture architecture = Architecture::kPlain;
  Grouping grouping = Grouping::kSingle;
  std::vector<std::string> group_names{"all"};
  InitOptions init;
  GacSpec gac;
  NtmConfig ntm;
};

// Fresh optimizer; each group draws from its own substream of rng.
LearnedOptimizer make_learned_optimizer(const LearnedOptimizerOptions& options,
                                        const RngStream& rng);

// Episode-local state of a learned rule.
struct RuleState {
  std::vector<CoordinateStateBank> banks;  // one per group
  std::optional<NtmState> ntm;
};

RuleState initial_rule_state(const LearnedOptimizer& opt, const ParameterGroupSpec& groups);

// Update g_t for the full gradient. When tapes is given (trainable
// architectures only) one StackTape per group is recorded. Throws
// DivergenceError on non-finite gradients or updates.
Vector learned_step(const LearnedOptimizer& opt, const ParameterGroupSpec& groups,
                    const Vector& grad, RuleState& state,
                    std::vector<StackTape>* tapes = nullptr);

// ---------------------------------------------------------------------------
// Serialized form: a versioned text header followed by a little-endian
// IEEE-754 payload of every weight.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOptimizerMagic = "l2l-optimizer";
inline constexpr int kOptimizerFormatVersion = 1;

void save_optimizer(const LearnedOptimizer& opt, std::ostream& out);
LearnedOptimizer load_optimizer(std::istream& in);
void save_optimizer_file(const LearnedOptimizer& opt, const std::string& path);
LearnedOptimizer load_optimizer_file(const std::string& path);

}  // namespace l2l
