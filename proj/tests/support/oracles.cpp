#include "oracles.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace oracle {
namespace {

bool ws(char c) { return std::string_view(" \t\n\r\v\f").find(c) != std::string_view::npos; }
bool term(char c) { return c == '.' || c == '!' || c == '?'; }
bool closer(char c) { return std::string_view(")]}\"'").find(c) != std::string_view::npos; }

const char* const kAbbr[] = {"al",  "approx", "cf", "dr",  "e.g", "eq",   "eqs",
                             "etc", "fig",    "figs", "i.e", "jr", "mr",   "mrs",
                             "ms",  "prof",   "resp", "sr",  "st", "viz",  "vs"};

struct Run {
  std::size_t begin, end;
  enum { space, terminal, other } type;
};

std::vector<Run> runs_of(std::string_view s) {
  std::vector<Run> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i + 1;
    if (ws(s[i])) {
      while (j < s.size() && ws(s[j])) ++j;
      out.push_back({i, j, Run::space});
    } else if (term(s[i])) {
      while (j < s.size() && term(s[j])) ++j;
      out.push_back({i, j, Run::terminal});
    } else {
      out.push_back({i, j, Run::other});
    }
    i = j;
  }
  return out;
}

bool abbreviation_before(std::string_view s, std::size_t dot) {
  // Letters and dots immediately before, leading dots dropped.
  std::string word;
  std::size_t b = dot;
  while (b > 0 && (std::isalpha(static_cast<unsigned char>(s[b - 1])) || s[b - 1] == '.') &&
         static_cast<unsigned char>(s[b - 1]) < 0x80) {
    --b;
  }
  word = std::string(s.substr(b, dot - b));
  while (!word.empty() && word.front() == '.') word.erase(0, 1);
  for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const char* a : kAbbr) {
    if (word == a) return true;
  }
  return false;
}

bool list_marker(std::string_view step_prefix) {
  std::size_t b = 0;
  while (b < step_prefix.size() && ws(step_prefix[b])) ++b;
  const auto digits = step_prefix.substr(b);
  if (digits.empty() || digits.size() > 3) return false;
  return std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; });
}

const std::vector<double>& row_for(const Table& t, const std::vector<std::string>& history,
                                   const std::vector<double>& uniform) {
  const std::size_t longest = std::min(t.order, history.size());
  for (std::size_t len = longest + 1; len-- > 0;) {
    std::vector<std::string> key(history.end() - static_cast<long>(len), history.end());
    auto it = t.rows.find(key);
    if (it != t.rows.end()) return it->second;
  }
  return uniform;
}

}  // namespace

std::vector<std::string> segment(std::string_view s) {
  std::vector<std::string> out;
  const auto runs = runs_of(s);
  std::size_t start = 0;
  bool content = false;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const Run& run = runs[r];
    if (run.type == Run::space) {
      const bool newline = s.substr(run.begin, run.end - run.begin).find('\n') != std::string_view::npos;
      if (newline && content) {
        out.emplace_back(s.substr(start, run.end - start));
        start = run.end;
        content = false;
      }
      continue;
    }
    content = true;
    if (run.type != Run::terminal) continue;
    // Closers right after the terminal run.
    std::size_t q = r + 1;
    while (q < runs.size() && runs[q].type == Run::other && closer(s[runs[q].begin])) ++q;
    const bool at_end = q == runs.size();
    const bool then_space = !at_end && runs[q].type == Run::space;
    if (!at_end && !then_space) continue;
    if (run.end - run.begin == 1 && s[run.begin] == '.') {
      if (abbreviation_before(s, run.begin)) continue;
      if (list_marker(s.substr(start, run.begin - start))) continue;
    }
    const std::size_t cut = at_end ? s.size() : runs[q].end;
    out.emplace_back(s.substr(start, cut - start));
    start = cut;
    content = false;
    r = at_end ? runs.size() : q;
  }
  if (start < s.size()) out.emplace_back(s.substr(start));
  return out;
}

std::vector<TokenStats> score_symbols(const Table& t, const std::vector<std::string>& context,
                                      const std::vector<std::string>& continuation) {
  const std::vector<double> uniform(t.vocab.size(), 1.0 / static_cast<double>(t.vocab.size()));
  std::vector<std::string> history{"<s>"};
  history.insert(history.end(), context.begin(), context.end());
  std::vector<TokenStats> out;
  for (const auto& sym : continuation) {
    const auto& row = row_for(t, history, uniform);
    auto it = std::find(t.vocab.begin(), t.vocab.end(), sym);
    if (it == t.vocab.end()) it = std::find(t.vocab.begin(), t.vocab.end(), "<unk>");
    const auto j = static_cast<std::size_t>(it - t.vocab.begin());
    TokenStats ts;
    ts.logp = std::log(static_cast<long double>(row[j]));
    long double h = 0, m = 0;
    for (double p : row) {
      const long double lp = p > 0 ? std::log(static_cast<long double>(p))
                                   : -std::numeric_limits<long double>::infinity();
      if (p > 0) h -= p * lp;
      m += lp;
    }
    ts.entropy = h;
    ts.mean_log = m / static_cast<long double>(row.size());
    out.push_back(ts);
    history.push_back(*it);
  }
  return out;
}

std::optional<long double> metric(const Table& t, const std::vector<std::string>& query,
                                  const std::vector<std::vector<std::string>>& steps, Kind kind,
                                  Mode mode, bool aligned, bool step_mean) {
  auto pick = [&](const TokenStats& s) -> long double {
    switch (kind) {
      case Kind::log_likelihood: return s.logp;
      case Kind::entropy: return aligned ? -s.entropy : s.entropy;
      case Kind::self_certainty: return aligned ? -s.mean_log : s.mean_log;
    }
    return 0;
  };
  if (mode == Mode::full) {
    std::vector<std::string> all;
    for (const auto& st : steps) all.insert(all.end(), st.begin(), st.end());
    if (all.empty()) return std::nullopt;
    long double sum = 0;
    for (const auto& s : score_symbols(t, query, all)) sum += pick(s);
    return sum / static_cast<long double>(all.size());
  }
  const std::vector<std::string> none;
  long double sum = 0, mean_sum = 0;
  std::size_t n = 0, k = 0;
  for (const auto& st : steps) {
    if (st.empty()) continue;
    long double step_sum = 0;
    for (const auto& s : score_symbols(t, mode == Mode::step_masked ? query : none, st)) {
      step_sum += pick(s);
    }
    sum += step_sum;
    mean_sum += step_sum / static_cast<long double>(st.size());
    n += st.size();
    ++k;
  }
  if (n == 0) return std::nullopt;
  return step_mean ? mean_sum / static_cast<long double>(k) : sum / static_cast<long double>(n);
}

std::string fixture_text(const Table& t) {
  std::ostringstream out;
  out << "vocab";
  for (const auto& v : t.vocab) out << ' ' << v;
  out << "\norder " << t.order << '\n';
  char buf[64];
  for (const auto& [ctx, probs] : t.rows) {
    for (const auto& c : ctx) out << c << ' ';
    for (std::size_t i = 0; i < probs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", probs[i]);
      out << (i ? " " : "") << buf;
    }
    out << '\n';
  }
  return out.str();
}

Table random_table(std::mt19937_64& rng, std::size_t v, std::size_t order) {
  Table t;
  for (std::size_t i = 0; i < v; ++i) t.vocab.push_back(std::string(1, static_cast<char>('a' + i)));
  t.vocab.push_back("<unk>");
  t.order = order;
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  std::bernoulli_distribution keep(0.6);
  auto add_row = [&](std::vector<std::string> ctx) {
    std::vector<double> w(t.vocab.size());
    for (auto& x : w) x = weight(rng);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= total;
    t.rows.emplace(std::move(ctx), std::move(w));
  };
  if (keep(rng)) add_row({});
  std::vector<std::vector<std::string>> layer{{}};
  for (std::size_t len = 1; len <= order; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& base : layer) {
      if (len == 1 || base.front() != "<s>") {
        auto with_bos = base;
        with_bos.insert(with_bos.begin(), "<s>");
        next.push_back(with_bos);
      }
      if (!base.empty() && base.front() == "<s>") continue;
      for (const auto& sym : t.vocab) {
        auto ctx = base;
        ctx.insert(ctx.begin(), sym);
        next.push_back(ctx);
      }
    }
    for (const auto& ctx : next) {
      if (keep(rng)) add_row(ctx);
    }
    layer = std::move(next);
  }
  return t;
}

std::vector<std::string> render_steps(const std::vector<std::vector<std::string>>& steps) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    std::string text;
    for (std::size_t i = 0; i < steps[k].size(); ++i) {
      if (i) text += ' ';
      text += steps[k][i];
    }
    if (k + 1 < steps.size()) text += ' ';
    out.push_back(text);
  }
  return out;
}

Mt64::Mt64(std::uint64_t seed) : idx_(312) {
  mt_[0] = seed;
  for (int i = 1; i < 312; ++i) {
    mt_[i] = 6364136223846793005ULL * (mt_[i - 1] ^ (mt_[i - 1] >> 62)) + static_cast<std::uint64_t>(i);
  }
}

std::uint64_t Mt64::next() {
  constexpr std::uint64_t upper = 0xFFFFFFFF80000000ULL, lower = 0x7FFFFFFFULL;
  constexpr std::uint64_t matrix = 0xB5026F5AA96619E9ULL;
  if (idx_ >= 312) {
    for (int i = 0; i < 312; ++i) {
      const std::uint64_t x = (mt_[i] & upper) | (mt_[(i + 1) % 312] & lower);
      std::uint64_t xa = x >> 1;
      if (x & 1) xa ^= matrix;
      mt_[i] = mt_[(i + 156) % 312] ^ xa;
    }
    idx_ = 0;
  }
  std::uint64_t y = mt_[idx_++];
  y ^= (y >> 29) & 0x5555555555555555ULL;
  y ^= (y << 17) & 0x71D67FFFEDA60000ULL;
  y ^= (y << 37) & 0xFFF7EEE000000000ULL;
  y ^= y >> 43;
  return y;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::size_t> shuffle_permutation(std::size_t k, std::uint64_t seed,
                                             std::string_view item_id, std::size_t candidate) {
  std::vector<std::size_t> p(k);
  std::iota(p.begin(), p.end(), 0);
  if (k < 2) return p;
  Mt64 gen(splitmix(splitmix(splitmix(seed) ^ fnv1a(item_id)) ^ candidate));
  for (std::size_t i = k - 1; i >= 1; --i) {
    const std::uint64_t m = i + 1;
    const unsigned __int128 two64 = static_cast<unsigned __int128>(1) << 64;
    const unsigned __int128 bound = (two64 / m) * m;
    std::uint64_t x;
    do {
      x = gen.next();
    } while (static_cast<unsigned __int128>(x) >= bound);
    std::swap(p[i], p[x % m]);
  }
  return p;
}

std::optional<std::pair<std::int64_t, std::int64_t>> rational(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  auto decimal = [](std::string_view d) -> std::optional<std::pair<std::int64_t, std::int64_t>> {
    std::int64_t num = 0, den = 1;
    bool seen_dot = false, any = false;
    for (char c : d) {
      if (c == '.' && !seen_dot) {
        seen_dot = true;
      } else if (c >= '0' && c <= '9') {
        num = num * 10 + (c - '0');
        if (seen_dot) den *= 10;
        any = true;
      } else {
        return std::nullopt;
      }
    }
    if (!any) return std::nullopt;
    return std::make_pair(num, den);
  };
  std::optional<std::pair<std::int64_t, std::int64_t>> r;
  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    const auto a = decimal(s.substr(0, slash));
    const auto b = decimal(s.substr(slash + 1));
    if (!a || !b || b->first == 0) return std::nullopt;
    r = std::make_pair(a->first * b->second, a->second * b->first);
  } else {
    r = decimal(s);
  }
  if (!r) return std::nullopt;
  const std::int64_t g = std::gcd(r->first, r->second);
  if (g) {
    r->first /= g;
    r->second /= g;
  }
  if (neg) r->first = -r->first;
  return r;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    }
    i += len;
  }
  return true;
}

std::string utf8_prefix(std::string_view s, std::size_t limit) {
  for (std::size_t len = std::min(limit, s.size()) + 1; len-- > 0;) {
    if (valid_utf8(s.substr(0, len))) return std::string(s.substr(0, len));
  }
  return {};
}

}  // namespace oracle
