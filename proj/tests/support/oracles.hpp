#pragma once

// Reference implementations used as test oracles. None of this code calls
// into ccb; it re-derives the expected values from first principles.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace oracle {

// --- segmentation ----------------------------------------------------------

/// Step texts by a run-based scan of the boundary rule table.
std::vector<std::string> segment(std::string_view text);

// --- table LM enumeration ---------------------------------------------------

struct Table {
  std::vector<std::string> vocab;
  std::size_t order = 0;
  std::map<std::vector<std::string>, std::vector<double>> rows;
};

/// Per-token statistics in nats, long double throughout.
struct TokenStats {
  long double logp = 0;
  long double entropy = 0;
  long double mean_log = 0;
};

/// Scores `continuation` (symbols) after "<s>" + `context` (symbols).
std::vector<TokenStats> score_symbols(const Table& t, const std::vector<std::string>& context,
                                      const std::vector<std::string>& continuation);

enum class Kind { self_certainty, log_likelihood, entropy };
enum class Mode { full, step_masked, query_masked };

/// Expected metric value; `steps` are the step symbol lists in order.
/// `aligned` negates entropy and self-certainty. nullopt when no tokens.
std::optional<long double> metric(const Table& t, const std::vector<std::string>& query,
                                  const std::vector<std::vector<std::string>>& steps, Kind kind,
                                  Mode mode, bool aligned = false, bool step_mean = false);

/// Serializes a table in the fixture text format (17 significant digits).
std::string fixture_text(const Table& t);

/// Random fixture over `v` word symbols plus <unk>, strictly positive rows.
Table random_table(std::mt19937_64& rng, std::size_t v, std::size_t order);

/// Renders symbol lists as text: symbols joined by single spaces, each step
/// followed by one space except the last.
std::vector<std::string> render_steps(const std::vector<std::vector<std::string>>& steps);

// --- generators --------------------------------------------------------------

/// MT19937-64 straight from the reference recurrence.
class Mt64 {
 public:
  explicit Mt64(std::uint64_t seed);
  std::uint64_t next();

 private:
  std::uint64_t mt_[312];
  int idx_;
};

std::uint64_t splitmix(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);

/// Expected shuffle permutation under the documented recipe.
std::vector<std::size_t> shuffle_permutation(std::size_t k, std::uint64_t seed,
                                             std::string_view item_id, std::size_t candidate);

// --- numbers -----------------------------------------------------------------

/// Reduced (num, den) for "a", "a.b", "a/b" with optional sign; int64 only.
std::optional<std::pair<std::int64_t, std::int64_t>> rational(std::string_view s);

// --- text --------------------------------------------------------------------

bool valid_utf8(std::string_view s);

/// Longest prefix of `s` of at most `limit` bytes that is valid UTF-8,
/// found by trying lengths downward.
std::string utf8_prefix(std::string_view s, std::size_t limit);

}  // namespace oracle
