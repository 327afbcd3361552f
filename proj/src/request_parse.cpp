// Deterministic request interpreter: normalization, tokenization and the
// schema-driven extractors behind DeterministicBackend.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <regex>
#include <set>

#include "cimdse/request_engine.hpp"

namespace cimdse {

namespace {

// ---- text helpers -----------------------------------------------------------

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string regex_escape(const std::string& s) {
  static const std::string special = R"(\^$.|?*+()[]{}-/)";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out += '\\';
    out += c;
  }
  return out;
}

std::string format_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 9.0e15) return std::to_string(static_cast<long long>(v));
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// ---- tokens -----------------------------------------------------------------

struct Tok {
  enum Kind { num, dims, word, punct } kind = word;
  std::size_t b = 0, e = 0;
  std::string text;  // word/punct text, or the number as written
  double value = 0;
  std::string unit;  // bit, nm, mm2, cm2, mw, w, us, %
  std::string dim_a, dim_b;
};

std::vector<Tok> tokenize(const std::string& s) {
  static const std::vector<std::pair<std::string, std::string>> units = {
      {"mm2", "mm2"}, {"cm2", "cm2"}, {"nm", "nm"}, {"mw", "mw"}, {"bits", "bit"},
      {"bit", "bit"}, {"b", "bit"},   {"us", "us"}, {"w", "w"},   {"%", "%"}};
  std::vector<Tok> out;
  const std::size_t n = s.size();
  std::size_t i = 0;
  auto read_int = [&](std::size_t k) {
    while (k < n && is_digit(s[k])) ++k;
    return k;
  };
  while (i < n) {
    const char c = s[i];
    if (c == ' ') {
      ++i;
      continue;
    }
    if (is_digit(c)) {
      std::size_t j = read_int(i);
      if (j + 1 < n && s[j] == '.' && is_digit(s[j + 1])) j = read_int(j + 1);
      Tok t;
      t.b = i;
      t.text = s.substr(i, j - i);
      t.value = std::stod(t.text);
      // AxB subarray dimensions
      std::size_t k = j;
      while (k < n && s[k] == ' ') ++k;
      if (k < n && s[k] == 'x') {
        std::size_t k2 = k + 1;
        while (k2 < n && s[k2] == ' ') ++k2;
        if (k2 < n && is_digit(s[k2])) {
          const std::size_t k3 = read_int(k2);
          t.kind = Tok::dims;
          t.dim_a = t.text;
          t.dim_b = s.substr(k2, k3 - k2);
          t.e = k3;
          t.text = s.substr(i, k3 - i);
          out.push_back(std::move(t));
          i = k3;
          continue;
        }
      }
      t.kind = Tok::num;
      t.e = j;
      k = j;
      while (k < n && s[k] == ' ') ++k;
      if (k < n && s[k] == '-') ++k;
      for (const auto& [spelling, canon] : units) {
        if (s.compare(k, spelling.size(), spelling) == 0) {
          const std::size_t end = k + spelling.size();
          if (spelling == "%" || end == n || !is_alnum(s[end])) {
            t.unit = canon;
            t.e = end;
            break;
          }
        }
      }
      i = t.e;
      out.push_back(std::move(t));
      continue;
    }
    if (is_alpha(c)) {
      std::size_t j = i;
      while (j < n && (is_alnum(s[j]) || s[j] == '-' || s[j] == '_' || s[j] == '\'')) ++j;
      while (j > i && (s[j - 1] == '-' || s[j - 1] == '\'')) --j;
      Tok t;
      t.kind = Tok::word;
      t.b = i;
      t.e = j;
      t.text = s.substr(i, j - i);
      out.push_back(std::move(t));
      i = j;
      continue;
    }
    Tok t;
    t.kind = Tok::punct;
    t.b = i;
    t.e = i + 1;
    t.text = std::string(1, c);
    out.push_back(std::move(t));
    ++i;
  }
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(s)) out.push_back(t.text);
  return out;
}

// ---- extraction state -----------------------------------------------------

struct Item {
  std::string value;
  std::string evidence;
  int link = -1;
  std::size_t pos = 0;
  ValueSource source = ValueSource::text;
};

struct Sweep {
  std::vector<std::string> entries;  // swept jointly
  std::optional<double> lo, hi;
  std::string evidence;
  std::size_t pos = 0;
};

struct AliasRef {
  std::string entry;
  std::vector<std::string> words;
};

class Extractor {
 public:
  Extractor(const std::string& normalized, const ParamSchema& schema, std::set<std::string> active)
      : s_(normalized), schema_(schema), active_(std::move(active)), used_(normalized.size(), 0), toks_(tokenize(s_)) {
    number_refs_ = entry_aliases([](const SchemaEntry& e) { return number_style(e); });
    for (const auto& e : schema_.entries()) {
      if (e.extractor != "choice") continue;
      for (const auto& [k, v] : spellings(e)) {
        if (k.find(' ') == std::string::npos) qualifiers_.insert(k);
      }
    }
  }

  std::map<std::string, std::vector<Item>> found;
  std::vector<Sweep> sweeps;

  void run(bool detect_sweeps) {
    base_model();
    conductance();
    variation();
    objective();
    name_list();
    if (detect_sweeps) sweep();
    precision_pair();
    dims();
    unit_numbers();
    numbers_near_aliases();
    flags();
    mode();
    choices();
  }

  std::size_t recognized() const { return found.size(); }

 private:
  bool active(const std::string& e) const { return active_.count(e) != 0; }

  bool span_used(std::size_t b, std::size_t e) const {
    for (std::size_t i = b; i < e && i < used_.size(); ++i) {
      if (used_[i]) return true;
    }
    return false;
  }
  void mark(std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e && i < used_.size(); ++i) used_[i] = 1;
  }
  void unmark(std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e && i < used_.size(); ++i) used_[i] = 0;
  }
  bool tok_used(std::size_t t) const { return span_used(toks_[t].b, toks_[t].e); }
  std::string text(std::size_t b, std::size_t e) const { return s_.substr(b, e - b); }
  std::string tok_span(std::size_t first, std::size_t last) const { return text(toks_[first].b, toks_[last].e); }

  void add(const std::string& entry, const std::string& value, const std::string& evidence, std::size_t pos,
           int link = -1, ValueSource src = ValueSource::text) {
    if (!active(entry)) return;
    auto& items = found[entry];
    for (const auto& it : items) {
      if (it.value == value) return;
    }
    items.push_back({value, evidence, link, pos, src});
  }

  bool is_word(std::size_t t, const char* w) const {
    return t < toks_.size() && toks_[t].kind == Tok::word && toks_[t].text == w;
  }
  bool is_punct(std::size_t t, char c) const {
    return t < toks_.size() && toks_[t].kind == Tok::punct && toks_[t].text[0] == c;
  }
  bool is_num(std::size_t t) const { return t < toks_.size() && toks_[t].kind == Tok::num; }

  // Number of tokens matched by `words` at t (plural tolerated on the last word).
  std::size_t match_words(std::size_t t, const std::vector<std::string>& words) const {
    if (words.empty() || t + words.size() > toks_.size()) return 0;
    for (std::size_t k = 0; k < words.size(); ++k) {
      const auto& tok = toks_[t + k];
      if (tok.kind != Tok::word && tok.kind != Tok::punct) return 0;
      if (tok.text == words[k]) continue;
      if (k + 1 == words.size() && (tok.text == words[k] + "s" || tok.text == words[k] + "es")) continue;
      return 0;
    }
    return words.size();
  }

  static std::vector<AliasRef> sorted(std::vector<AliasRef> refs) {
    std::stable_sort(refs.begin(), refs.end(), [](const AliasRef& a, const AliasRef& b) {
      if (a.words.size() != b.words.size()) return a.words.size() > b.words.size();
      std::size_t la = 0, lb = 0;
      for (const auto& w : a.words) la += w.size();
      for (const auto& w : b.words) lb += w.size();
      return la > lb;
    });
    return refs;
  }

  std::vector<AliasRef> entry_aliases(const std::function<bool(const SchemaEntry&)>& pick) const {
    std::vector<AliasRef> refs;
    for (const auto& e : schema_.entries()) {
      if (!pick(e)) continue;
      for (const auto& a : e.aliases) refs.push_back({e.name, split_words(a)});
    }
    return sorted(std::move(refs));
  }

  static bool number_style(const SchemaEntry& e) {
    return e.extractor == "number_near" || e.extractor == "dims" || e.extractor == "unit_number";
  }

  static std::set<std::string> accepted_units(const SchemaEntry& e) {
    if (e.unit == "bit") return {"", "bit"};
    if (e.unit == "nm") return {"nm"};
    if (e.unit == "mm2") return {"mm2", "cm2"};
    if (e.unit == "mW") return {"mw", "w"};
    return {""};
  }

  static double convert(const std::string& unit, double v) {
    if (unit == "cm2") return v * 100.0;
    if (unit == "w") return v * 1000.0;
    return v;
  }

  // A number token directly followed by an alias of a number-style entry binds
  // to that alias.
  bool binds_backward(std::size_t num_tok) const {
    for (const auto& r : number_refs_) {
      if (match_words(num_tok + 1, r.words)) return true;
    }
    return false;
  }

  struct NumList {
    std::vector<std::size_t> items;
    std::string unit;
    std::size_t first = 0, last = 0;
  };

  NumList list_from(std::size_t t, bool stop_at_bound) const {
    NumList L;
    L.items.push_back(t);
    std::size_t idx = t;
    bool comma_seen = false;
    while (true) {
      std::size_t j = idx + 1;
      bool comma = false;
      if (is_punct(j, ',')) {
        comma = true;
        ++j;
        if (is_word(j, "and") || is_word(j, "or")) ++j;
      } else if (is_punct(j, '/')) {
        ++j;
      } else if (is_word(j, "and") || is_word(j, "or")) {
        ++j;
      } else {
        break;
      }
      if (!is_num(j) || tok_used(j)) break;
      const auto& prev = toks_[idx].unit;
      const auto& next = toks_[j].unit;
      if (!prev.empty() && !next.empty() && prev != next) break;
      if (!prev.empty() && next.empty()) break;
      if (stop_at_bound && binds_backward(j)) break;
      comma_seen = comma_seen || comma;
      L.items.push_back(j);
      idx = j;
    }
    L.first = t;
    L.last = idx;
    L.unit = toks_[idx].unit;
    return L;
  }

  std::optional<NumList> list_ending_at(std::size_t p) const {
    if (!is_num(p) || tok_used(p)) return std::nullopt;
    NumList L;
    L.items.push_back(p);
    std::size_t q = p;
    while (q >= 2) {
      std::size_t j = q - 1;
      if (is_word(j, "and") || is_word(j, "or")) {
        if (j >= 1 && is_punct(j - 1, ',')) --j;
      } else if (!is_punct(j, ',') && !is_punct(j, '/')) {
        break;
      }
      if (j == 0 || !is_num(j - 1) || tok_used(j - 1)) break;
      const auto& u = toks_[j - 1].unit;
      if (!u.empty() && u != toks_[p].unit) break;
      L.items.insert(L.items.begin(), j - 1);
      q = j - 1;
    }
    L.first = L.items.front();
    L.last = p;
    L.unit = toks_[p].unit;
    return L;
  }

  bool units_ok(const NumList& L, const std::set<std::string>& accepted) const {
    for (auto t : L.items) {
      const auto& u = toks_[t].unit.empty() ? L.unit : toks_[t].unit;
      if (!accepted.count(u)) return false;
    }
    return true;
  }

  std::vector<std::string> list_values(const NumList& L, bool integer, bool convert_units) const {
    std::vector<std::string> out;
    for (auto t : L.items) {
      const auto& u = toks_[t].unit.empty() ? L.unit : toks_[t].unit;
      const double v = convert_units ? convert(u, toks_[t].value) : toks_[t].value;
      out.push_back(format_number(integer ? std::round(v) : v));
    }
    return out;
  }

  void assign_list(const std::string& entry, const NumList& L, std::size_t ev_first, std::size_t ev_last) {
    const auto& e = schema_.at(entry);
    const auto vals = list_values(L, e.type == EntryType::integer, true);
    const auto ev = tok_span(ev_first, ev_last);
    const int link = L.items.size() > 1 ? next_link_++ : -1;
    for (std::size_t i = 0; i < vals.size(); ++i) add(entry, vals[i], ev, toks_[L.items[i]].b, link);
    mark(toks_[ev_first].b, toks_[ev_last].e);
  }

  // ---- extractors -----------------------------------------------------------

  std::string alternation(const std::vector<std::string>& spellings) const {
    std::vector<std::string> v = spellings;
    std::stable_sort(v.begin(), v.end(), [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
    std::string out;
    for (const auto& x : v) {
      if (!out.empty()) out += '|';
      out += regex_escape(x);
    }
    return out;
  }

  // spelling -> canonical value
  std::map<std::string, std::string> spellings(const SchemaEntry& e) const {
    std::map<std::string, std::string> m;
    for (const auto& v : e.values) {
      std::string l = v;
      for (auto& c : l) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      m[l] = v;
    }
    for (const auto& [v, al] : e.value_aliases) {
      for (const auto& a : al) m[a] = v;
    }
    return m;
  }

  template <class Fn>
  void each_match(const std::regex& re, Fn&& fn) {
    for (auto it = std::sregex_iterator(s_.begin(), s_.end(), re); it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      const auto b = static_cast<std::size_t>(m.position(0));
      const auto e = b + static_cast<std::size_t>(m.length(0));
      if (span_used(b, e)) continue;
      if (fn(m, b, e)) mark(b, e);
    }
  }

  void base_model() {
    if (!active("baseModel")) return;
    const auto& entry = schema_.at("baseModel");
    const auto sp = spellings(entry);
    std::vector<std::string> keys;
    for (const auto& [k, v] : sp) keys.push_back(k);
    const std::string M = "(" + alternation(keys) + ")";
    const std::vector<std::regex> patterns = {
        std::regex(R"(\btransfer(?:ring|red)?\s+(?:knowledge\s+)?from\s+(?:the\s+)?)" + M + R"((?![a-z0-9]))"),
        std::regex(R"(\b(?:from|using|use|with)\s+(?:the\s+|a\s+)?)" + M +
                   R"(\s+(?:as\s+(?:the\s+)?base|base)(?:\s+(?:dataset|model|space))?\b)"),
        std::regex(R"(\b)" + M + R"(\s+(?:as\s+(?:the\s+)?)?base\s+(?:dataset|model|space)\b)"),
        std::regex(R"(\bbase\s+(?:dataset|model)\s+(?:is\s+|of\s+|from\s+)?(?:the\s+)?)" + M + R"((?![a-z0-9]))"),
    };
    for (const auto& re : patterns) {
      each_match(re, [&](const std::smatch& m, std::size_t b, std::size_t) {
        add("baseModel", sp.at(m.str(1)), m.str(0), b);
        return true;
      });
    }
  }

  void conductance() {
    if (!active("conductance")) return;
    static const std::regex re(R"((\d+(?:\.\d+)?)\s*us\s*(?:and|,|/|to|-)\s*(\d+(?:\.\d+)?)\s*us\b)");
    each_match(re, [&](const std::smatch& m, std::size_t b, std::size_t) {
      add("conductance", m.str(1) + "uS/" + m.str(2) + "uS", m.str(0), b);
      return true;
    });
  }

  void variation() {
    if (!active("variation")) return;
    static const std::regex none(R"(\b(?:no|without(?:\s+any)?|zero)\s+(?:device\s+)?variations?\b)");
    static const std::regex pct1(R"((\d+(?:\.\d+)?)\s*%\s*(?:device\s+)?variations?\b)");
    static const std::regex pct2(R"(\bvariations?\s+(?:of\s+)?(\d+(?:\.\d+)?)\s*%)");
    each_match(none, [&](const std::smatch& m, std::size_t b, std::size_t) {
      add("variation", "none", m.str(0), b);
      return true;
    });
    for (const auto* re : {&pct1, &pct2}) {
      each_match(*re, [&](const std::smatch& m, std::size_t b, std::size_t) {
        add("variation", m.str(1) + "%", m.str(0), b);
        return true;
      });
    }
  }

  void objective() {
    if (!active("objectiveMetric")) return;
    const auto sp = spellings(schema_.at("objectiveMetric"));
    std::vector<std::string> keys;
    for (const auto& [k, v] : sp) keys.push_back(k);
    static const std::string kMin = R"(minimum|minimal|lowest|least|smallest|lower|reduced?|min|minimi[sz]e[sd]?|minimi[sz]ing)";
    static const std::string kMax =
        R"(maximum|maximal|highest|largest|best|higher|most|max|maximi[sz]e[sd]?|maximi[sz]ing)";
    static const std::string kAny = R"(optimi[sz]e[sd]?|optimi[sz]ing|optimal|optimum)";
    const std::regex re(R"(\b()" + kMin + "|" + kMax + "|" + kAny +
                        R"()\s+(?:the\s+|its\s+|overall\s+|total\s+)?()" + alternation(keys) + R"()\b)");
    const std::regex is_min("^(?:" + kMin + ")$");
    const std::regex is_max("^(?:" + kMax + ")$");
    bool done = false;
    each_match(re, [&](const std::smatch& m, std::size_t b, std::size_t) {
      if (done) return false;
      done = true;
      const std::string metric = sp.at(m.str(2));
      add("objectiveMetric", metric, m.str(0), b);
      const std::string word = m.str(1);
      if (std::regex_match(word, is_min)) add("objectiveDirection", "minimize", m.str(0), b);
      else if (std::regex_match(word, is_max)) add("objectiveDirection", "maximize", m.str(0), b);
      return true;
    });
  }

  void name_list() {
    if (!active("optimizeParams")) return;
    static const std::regex trigger(
        R"(\b(?:combinations?\s+of|search(?:ing)?\s+over|explor(?:e|ing)|optimi[sz]e\s+over|tun(?:e|ing)|choos(?:e|ing)|select(?:ing)?)\b)");
    std::vector<AliasRef> refs;
    for (const auto& e : schema_.entries()) {
      if (e.group != "hardware") continue;
      for (const auto& a : e.aliases) refs.push_back({e.name, split_words(a)});
    }
    for (const auto& [g, members] : schema_.groups()) {
      bool hw = true;
      for (const auto& m : members) hw = hw && schema_.at(m).group == "hardware";
      if (!hw) continue;
      std::string joined;
      for (const auto& m : members) joined += (joined.empty() ? "" : ",") + m;
      refs.push_back({joined, split_words(g)});
    }
    refs = sorted(std::move(refs));
    static const std::set<std::string> stops = {"with", "under", "within", "using", "subject", "for", "while", "given"};
    for (auto it = std::sregex_iterator(s_.begin(), s_.end(), trigger); it != std::sregex_iterator(); ++it) {
      const auto tb = static_cast<std::size_t>(it->position(0));
      const auto te = tb + static_cast<std::size_t>(it->length(0));
      std::size_t t = 0;
      while (t < toks_.size() && toks_[t].b < te) ++t;
      std::vector<std::string> names;
      std::size_t last_tok = t;
      while (t < toks_.size()) {
        const auto& tok = toks_[t];
        if (tok.kind == Tok::punct && (tok.text == "." || tok.text == ";" || tok.text == "?" || tok.text == "!")) break;
        if (tok.kind == Tok::word && stops.count(tok.text)) break;
        bool hit = false;
        for (const auto& r : refs) {
          if (const auto k = match_words(t, r.words)) {
            std::size_t start = 0;
            while (start <= r.entry.size()) {
              const auto comma = r.entry.find(',', start);
              const auto name = r.entry.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
              if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
              if (comma == std::string::npos) break;
              start = comma + 1;
            }
            t += k;
            last_tok = t - 1;
            hit = true;
            break;
          }
        }
        if (!hit) ++t;
      }
      if (names.empty()) continue;
      std::string value;
      for (const auto& n : names) value += (value.empty() ? "" : ",") + n;
      add("optimizeParams", value, text(tb, toks_[last_tok].e), tb);
      mark(tb, toks_[last_tok].e);
      return;
    }
  }

  void sweep() {
    static const std::set<std::string> triggers = {"different", "various", "varying", "several", "multiple",
                                                   "all",       "sweep",   "sweeping", "sweeps"};
    static const std::set<std::string> skip = {"the", "of", "over", "possible", "supported", "admissible",
                                               "available", "across", "a", "range"};
    std::vector<AliasRef> refs;
    for (const auto& e : schema_.entries()) {
      if (!e.sweepable || !active(e.name)) continue;
      for (const auto& a : e.aliases) refs.push_back({e.name, split_words(a)});
    }
    for (const auto& [g, members] : schema_.groups()) {
      bool ok = true;
      for (const auto& m : members) ok = ok && schema_.at(m).sweepable && active(m);
      if (!ok) continue;
      std::string joined;
      for (const auto& m : members) joined += (joined.empty() ? "" : ",") + m;
      refs.push_back({joined, split_words(g)});
    }
    refs = sorted(std::move(refs));
    for (std::size_t t = 0; t < toks_.size(); ++t) {
      bool trig = toks_[t].kind == Tok::word && triggers.count(toks_[t].text);
      if (!trig && is_word(t, "range") && is_word(t + 1, "of")) trig = true;
      if (!trig || tok_used(t)) continue;
      std::size_t k = t + 1;
      while (k < toks_.size() && toks_[k].kind == Tok::word && skip.count(toks_[k].text)) ++k;
      for (const auto& r : refs) {
        const auto len = match_words(k, r.words);
        if (!len) continue;
        Sweep sw;
        std::size_t start = 0;
        while (true) {
          const auto comma = r.entry.find(',', start);
          sw.entries.push_back(r.entry.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        std::size_t end = k + len - 1;
        // optional bounds: from A to B / between A and B
        const std::size_t a = end + 1;
        if ((is_word(a, "from") && is_num(a + 1) && is_word(a + 2, "to") && is_num(a + 3)) ||
            (is_word(a, "between") && is_num(a + 1) && is_word(a + 2, "and") && is_num(a + 3))) {
          sw.lo = std::min(toks_[a + 1].value, toks_[a + 3].value);
          sw.hi = std::max(toks_[a + 1].value, toks_[a + 3].value);
          end = a + 3;
        }
        sw.evidence = tok_span(t, end);
        sw.pos = toks_[t].b;
        mark(toks_[t].b, toks_[end].e);
        sweeps.push_back(std::move(sw));
        break;
      }
    }
  }

  void precision_pair() {
    if (!active("inputBits") || !active("weightBits")) return;
    static const std::set<std::string> before = {"both", "for", "the", "quantization", "precision", "precisions", "of"};
    static const std::set<std::string> after = {"precision", "precisions", "quantization", "of", "is", "are", "to"};
    for (std::size_t t = 0; t + 2 < toks_.size(); ++t) {
      const bool in = is_word(t, "input") || is_word(t, "inputs");
      const bool w = is_word(t + 2, "weight") || is_word(t + 2, "weights");
      if (!in || !is_word(t + 1, "and") || !w || tok_used(t)) continue;
      // list before the phrase
      std::size_t p = t;
      while (p > 0 && toks_[p - 1].kind == Tok::word && before.count(toks_[p - 1].text)) --p;
      if (p > 0) {
        if (auto L = list_ending_at(p - 1); L && units_ok(*L, {"", "bit"})) {
          assign_pair(*L, L->first, t + 2);
          continue;
        }
      }
      // list after the phrase
      std::size_t q = t + 3;
      while (q < toks_.size() && ((toks_[q].kind == Tok::word && after.count(toks_[q].text)) || is_punct(q, ':') ||
                                  is_punct(q, '='))) {
        ++q;
      }
      if (is_num(q) && !tok_used(q)) {
        auto L = list_from(q, true);
        if (units_ok(L, {"", "bit"})) assign_pair(L, t, L.last);
      }
    }
  }

  void assign_pair(const NumList& L, std::size_t ev_first, std::size_t ev_last) {
    const auto vals = list_values(L, true, false);
    const auto ev = tok_span(ev_first, ev_last);
    const int link = next_link_++;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      add("inputBits", vals[i], ev, toks_[L.items[i]].b, link);
      add("weightBits", vals[i], ev, toks_[L.items[i]].b, link);
    }
    mark(toks_[ev_first].b, toks_[ev_last].e);
  }

  void dims() {
    for (std::size_t t = 0; t < toks_.size(); ++t) {
      if (toks_[t].kind != Tok::dims || tok_used(t)) continue;
      std::vector<std::size_t> items{t};
      std::size_t idx = t;
      while (true) {
        std::size_t j = idx + 1;
        if (is_punct(j, ',')) {
          ++j;
          if (is_word(j, "and") || is_word(j, "or")) ++j;
        } else if (is_word(j, "and") || is_word(j, "or") || is_punct(j, '/')) {
          ++j;
        } else {
          break;
        }
        if (j >= toks_.size() || toks_[j].kind != Tok::dims || tok_used(j)) break;
        items.push_back(j);
        idx = j;
      }
      bool digital = false;
      for (std::size_t k = t >= 4 ? t - 4 : 0; k < t; ++k) digital = digital || is_word(k, "dcim") || is_word(k, "digital");
      for (std::size_t k = idx + 1; k < std::min(toks_.size(), idx + 3); ++k) digital = digital || is_word(k, "dcim");
      const std::string row = digital ? "rowDCIM" : "rowACIM";
      const std::string col = digital ? "colDCIM" : "colACIM";
      const auto ev = tok_span(t, idx);
      const int link = next_link_++;
      for (auto k : items) {
        add(row, toks_[k].dim_a, ev, toks_[k].b, link);
        add(col, toks_[k].dim_b, ev, toks_[k].b, link);
      }
      mark(toks_[t].b, toks_[idx].e);
      t = idx;
    }
  }

  void unit_numbers() {
    for (const auto& e : schema_.entries()) {
      if (e.extractor != "unit_number" || !active(e.name)) continue;
      const auto accepted = accepted_units(e);
      for (std::size_t t = 0; t < toks_.size(); ++t) {
        if (!is_num(t) || tok_used(t)) continue;
        auto L = list_from(t, false);
        if (L.unit.empty() || !units_ok(L, accepted)) continue;
        assign_list(e.name, L, L.first, L.last);
        t = L.last;
      }
    }
  }

  void numbers_near_aliases() {
    static const std::set<std::string> fillers = {"of",    "is",        "are",   "to",    "at",  "set", "be",
                                                  "equal", "equals",    "was",   "value", "the", "a",   "fixed", "with",
                                                  "size",  "precision", "count", "number"};
    const auto refs = entry_aliases([&](const SchemaEntry& e) { return number_style(e) && active(e.name); });
    for (const auto& r : refs) {
      const auto& entry = schema_.at(r.entry);
      const auto accepted = accepted_units(entry);
      for (std::size_t t = 0; t < toks_.size(); ++t) {
        const auto len = match_words(t, r.words);
        if (!len || span_used(toks_[t].b, toks_[t + len - 1].e)) continue;
        // forward
        std::size_t k = t + len;
        std::size_t skipped = 0;
        while (k < toks_.size() && skipped < 3 &&
               ((toks_[k].kind == Tok::word && fillers.count(toks_[k].text)) || is_punct(k, ':') || is_punct(k, '='))) {
          ++k;
          ++skipped;
        }
        if (is_num(k) && !tok_used(k)) {
          auto L = list_from(k, true);
          if (units_ok(L, accepted)) {
            assign_list(r.entry, L, t, L.last);
            continue;
          }
        }
        // backward, over at most two qualifier words ("6-bit sar adc")
        std::size_t q = t;
        while (q > 0 && t - q < 2 && toks_[q - 1].kind == Tok::word && qualifiers_.count(toks_[q - 1].text)) --q;
        if (q > 0) {
          if (auto L = list_ending_at(q - 1); L && units_ok(*L, accepted)) {
            assign_list(r.entry, *L, L->first, t + len - 1);
            for (std::size_t k = q; k < t; ++k) unmark(toks_[k].b, toks_[k].e);
          }
        }
      }
    }
  }

  void flags() {
    static const std::set<std::string> neg = {"without", "no", "disable", "disabled", "not", "skip"};
    static const std::set<std::string> pos = {"with", "enable", "enabled", "use", "using", "apply", "applying", "turn"};
    for (const auto& e : schema_.entries()) {
      if (e.extractor != "flag" || !active(e.name)) continue;
      const bool numeric = std::find(e.values.begin(), e.values.end(), "1") != e.values.end();
      const std::string on = numeric ? "1" : "on";
      const std::string off = numeric ? "0" : "off";
      std::vector<AliasRef> refs;
      for (const auto& a : e.aliases) refs.push_back({e.name, split_words(a)});
      refs = sorted(std::move(refs));
      for (const auto& r : refs) {
        for (std::size_t t = 0; t < toks_.size(); ++t) {
          const auto len = match_words(t, r.words);
          if (!len || span_used(toks_[t].b, toks_[t + len - 1].e)) continue;
          std::size_t first = t;
          std::size_t last = t + len - 1;
          std::optional<bool> value;
          for (std::size_t back = 1; back <= 3 && back <= t && !value; ++back) {
            const auto& w = toks_[t - back];
            if (w.kind != Tok::word) break;
            if (neg.count(w.text)) value = false, first = t - back;
            else if (pos.count(w.text)) value = true, first = t - back;
          }
          if (!value) {
            std::size_t a = last + 1;
            if (is_word(a, "is")) ++a;
            if (is_word(a, "off") || is_word(a, "disabled")) value = false, last = a;
            else if (is_word(a, "on") || is_word(a, "enabled")) value = true, last = a;
          }
          add(e.name, value.value_or(true) ? on : off, tok_span(first, last), toks_[first].b);
          mark(toks_[first].b, toks_[last].e);
        }
      }
    }
  }

  void mode() {
    if (!active("mode")) return;
    static const std::regex acc_only(
        R"(\b(?:only\s+(?:want\s+to\s+|need\s+to\s+)?(?:simulate|check|get|estimate|evaluate|report)\s+(?:the\s+)?(?:inference\s+)?accuracy|accuracy\s+only|without\s+(?:the\s+)?ppa)\b)");
    static const std::regex ppa_only(
        R"(\b(?:only\s+(?:want\s+to\s+|need\s+to\s+)?(?:simulate|check|get|estimate|evaluate|report)\s+(?:the\s+)?ppa|ppa\s+only|without\s+(?:the\s+)?accuracy)\b)");
    std::smatch m;
    if (std::regex_search(s_, m, acc_only)) {
      add("mode", "accuracy", m.str(0), static_cast<std::size_t>(m.position(0)));
      return;
    }
    if (std::regex_search(s_, m, ppa_only)) {
      add("mode", "ppa", m.str(0), static_cast<std::size_t>(m.position(0)));
      return;
    }
    static const std::regex acc(R"(\baccuracy\b)");
    static const std::regex ppa(R"(\bppa\b)");
    std::smatch ma, mp;
    const bool has_acc = std::regex_search(s_, ma, acc);
    const bool has_ppa = std::regex_search(s_, mp, ppa);
    if (has_acc && has_ppa) {
      const auto b = static_cast<std::size_t>(std::min(ma.position(0), mp.position(0)));
      const auto e = static_cast<std::size_t>(std::max(ma.position(0) + ma.length(0), mp.position(0) + mp.length(0)));
      add("mode", "both", text(b, e), b);
    } else if (has_acc) {
      add("mode", "accuracy", ma.str(0), static_cast<std::size_t>(ma.position(0)));
    } else if (has_ppa) {
      add("mode", "ppa", mp.str(0), static_cast<std::size_t>(mp.position(0)));
    }
  }

  void choices() {
    for (const auto& e : schema_.entries()) {
      if (e.extractor != "choice" || !active(e.name)) continue;
      const auto sp = spellings(e);
      std::vector<std::string> keys;
      for (const auto& [k, v] : sp) keys.push_back(k);
      std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
      std::vector<std::pair<std::size_t, std::string>> hits;
      for (const auto& k : keys) {
        for (std::size_t pos = s_.find(k); pos != std::string::npos; pos = s_.find(k, pos + 1)) {
          const std::size_t end = pos + k.size();
          if (pos > 0 && is_alnum(s_[pos - 1])) continue;
          if (end < s_.size() && is_alnum(s_[end])) continue;
          if (span_used(pos, end)) continue;
          mark(pos, end);
          hits.push_back({pos, k});
        }
      }
      std::sort(hits.begin(), hits.end());
      for (const auto& [pos, k] : hits) add(e.name, sp.at(k), k, pos);
    }
  }

  const std::string& s_;
  const ParamSchema& schema_;
  std::set<std::string> active_;
  std::vector<char> used_;
  std::vector<Tok> toks_;
  std::vector<AliasRef> number_refs_;
  std::set<std::string> qualifiers_;  // single-word choice spellings
  int next_link_ = 0;
};

std::set<std::string> active_entries(const ParamSchema& schema, RequestCategory c) {
  std::set<std::string> out;
  for (const auto& e : schema.entries()) {
    if (e.applies(c)) out.insert(e.name);
  }
  return out;
}

const std::regex& optimization_words() {
  static const std::regex re(
      R"(\b(?:optimi[sz]e[sd]?|optimi[sz]ing|optimi[sz]ation|optimal|optimum|minimi[sz]e|maximi[sz]e|minimum|maximum|constraints?|simulated?\s+annealing|genetic\s+algorithm|tpe|parzen|random\s+search|ga|genetic|annealing|find\s+the\s+best|best\s+(?:cim\s+)?(?:configuration|design))\b)");
  return re;
}

bool rules_hold(const ParamMap& values, const ParamSchema& schema) {
  for (const auto& rname : schema.rules()) {
    const auto& rule = builtin_rule(rname);
    DesignPoint p;
    bool complete = true;
    for (const auto& param : rule.params) {
      auto it = values.find(param);
      std::optional<std::string> v;
      if (it != values.end()) v = it->second;
      else if (const auto* e = schema.find(param); e && e->default_value) v = e->default_value;
      if (!v) {
        complete = false;
        break;
      }
      std::int64_t iv = 0;
      auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), iv);
      if (ec != std::errc() || ptr != v->data() + v->size()) {
        complete = false;
        break;
      }
      p.set(param, iv);
    }
    if (complete && !rule.holds(p)) return false;
  }
  return true;
}

struct Dimension {
  std::vector<std::string> entries;
  std::vector<std::vector<Item>> items;  // aligned with entries, equal length
  std::size_t pos = 0;
};

std::vector<Dimension> dimensions(const std::map<std::string, std::vector<Item>>& found) {
  std::map<int, std::vector<std::string>> by_link;
  std::vector<Dimension> dims;
  for (const auto& [name, items] : found) {
    if (items.size() < 2) continue;
    int link = items.front().link;
    for (const auto& it : items) {
      if (it.link != link) link = -1;
    }
    if (link >= 0) {
      by_link[link].push_back(name);
    } else {
      dims.push_back({{name}, {items}, items.front().pos});
    }
  }
  for (const auto& [link, names] : by_link) {
    std::map<std::size_t, Dimension> by_size;
    for (const auto& n : names) {
      const auto& items = found.at(n);
      auto& d = by_size[items.size()];
      d.entries.push_back(n);
      d.items.push_back(items);
      d.pos = items.front().pos;
    }
    for (auto& [sz, d] : by_size) dims.push_back(std::move(d));
  }
  std::stable_sort(dims.begin(), dims.end(), [](const Dimension& a, const Dimension& b) { return a.pos < b.pos; });
  return dims;
}

}  // namespace

std::string normalize_request_text(const std::string& text) {
  std::string s = text;
  for (const auto& [from, to] : std::vector<std::pair<std::string, std::string>>{
           {"\xE2\x80\x99", "'"},  {"\xE2\x80\x98", "'"},  {"\xE2\x80\x9C", "\""}, {"\xE2\x80\x9D", "\""},
           {"\xC2\xB2", "2"},      {"\xC2\xB5", "u"},      {"\xCE\xBC", "u"},      {"\xC3\x97", "x"},
           {"\xE2\x80\x93", "-"},  {"\xE2\x80\x94", "-"},  {"$^2$", "2"},          {"$^{2}$", "2"},
           {"^2", "2"},            {"\xC2\xA0", " "}}) {
    replace_all(s, from, to);
  }
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

Classification DeterministicBackend::classify(const std::string& text, const ParamSchema& schema) {
  const auto s = normalize_request_text(text);
  Classification c;
  std::smatch m;
  if (std::regex_search(s, m, optimization_words())) {
    c.category = RequestCategory::ppa_optimization;
    c.rationale = "optimization wording '" + m.str(0) + "'";
    return c;
  }
  Extractor ex(s, schema, active_entries(schema, RequestCategory::multiple_call));
  ex.run(true);
  for (const auto& [name, items] : ex.found) {
    if (items.size() > 1) {
      std::string vals;
      for (const auto& it : items) vals += (vals.empty() ? "" : ", ") + it.value;
      c.category = RequestCategory::multiple_call;
      c.rationale = name + " has several values (" + vals + ")";
      return c;
    }
  }
  if (!ex.sweeps.empty()) {
    c.category = RequestCategory::testbench_auto_design;
    c.rationale = "sweep without explicit values: '" + ex.sweeps.front().evidence + "'";
    return c;
  }
  const bool model = ex.found.count("model") != 0;
  if ((model && ex.recognized() >= 1) || ex.recognized() >= 2) {
    c.category = RequestCategory::single_call;
    c.rationale = "one configuration with " + std::to_string(ex.recognized()) + " recognized parameters";
    return c;
  }
  c.category = RequestCategory::unknown;
  c.rationale = "no simulation or optimization intent recognized";
  c.clarification =
      "Which network should be run, and do you want a simulation or an optimization? For example: simulate "
      "ResNet-50 on ImageNet with SRAM, a 128x128 subarray and 5-bit ADC, or optimize FoM under an area limit.";
  return c;
}

ParsedRequest DeterministicBackend::parse(const std::string& text, RequestCategory category, const ParamSchema& schema) {
  if (category == RequestCategory::unknown) throw Error(ErrorKind::config, "cannot parse an Unknown request");
  const auto s = normalize_request_text(text);
  const bool tad = category == RequestCategory::testbench_auto_design;
  Extractor ex(s, schema, active_entries(schema, category));
  ex.run(tad);

  ParsedRequest p;
  p.category = category;

  // Single-valued entries are common.
  for (const auto& [name, items] : ex.found) {
    if (items.size() != 1) continue;
    p.common[name] = items.front().value;
    p.provenance[{kCommon, name}] = {items.front().source, items.front().evidence};
  }

  auto dims = dimensions(ex.found);

  if (tad) {
    if (ex.sweeps.empty()) p.notes.push_back("no swept parameter recognized");
    for (const auto& sw : ex.sweeps) {
      Dimension d;
      d.pos = sw.pos;
      std::size_t count = static_cast<std::size_t>(-1);
      std::vector<std::vector<std::string>> vals;
      for (const auto& name : sw.entries) {
        const auto& e = schema.at(name);
        std::vector<std::string> v;
        for (const auto& x : e.values) {
          const double num = std::strtod(x.c_str(), nullptr);
          if (sw.lo && (e.type == EntryType::choice || num < *sw.lo || num > *sw.hi)) continue;
          v.push_back(x);
        }
        if (v.empty()) {
          p.notes.push_back("sweep of " + name + " has no admissible values");
          continue;
        }
        count = std::min(count, v.size());
        vals.push_back(std::move(v));
        d.entries.push_back(name);
      }
      if (d.entries.empty()) continue;
      for (auto& v : vals) {
        std::vector<Item> items;
        for (std::size_t i = 0; i < count; ++i) items.push_back({v[i], sw.evidence, -1, sw.pos, ValueSource::sweep});
        d.items.push_back(std::move(items));
      }
      for (const auto& name : d.entries) {
        p.common.erase(name);
        p.provenance.erase({kCommon, name});
      }
      dims.push_back(std::move(d));
    }
    std::stable_sort(dims.begin(), dims.end(), [](const Dimension& a, const Dimension& b) { return a.pos < b.pos; });
  }

  // Cartesian product over dimensions, first dimension varying slowest.
  std::size_t total = 1;
  for (const auto& d : dims) total *= d.items.front().size();
  for (std::size_t idx = 0; idx < total; ++idx) {
    ParamMap tb;
    std::map<std::string, Item> used;
    std::size_t rem = idx;
    std::size_t stride = total;
    for (const auto& d : dims) {
      const std::size_t n = d.items.front().size();
      stride /= n;
      const std::size_t k = rem / stride;
      rem %= stride;
      for (std::size_t e = 0; e < d.entries.size(); ++e) {
        tb[d.entries[e]] = d.items[e][k].value;
        used[d.entries[e]] = d.items[e][k];
      }
    }
    if (tad) {
      ParamMap resolved = p.common;
      for (const auto& [k, v] : tb) resolved[k] = v;
      if (!rules_hold(resolved, schema)) {
        std::string desc;
        for (const auto& [k, v] : tb) desc += (desc.empty() ? "" : ", ") + k + "=" + v;
        p.notes.push_back("sweep point (" + desc + ") violates a validity rule and was dropped");
        continue;
      }
      if (p.testbenches.size() == 8) {
        p.notes.push_back("sweep capped at 8 testbenches");
        break;
      }
    }
    p.testbenches.push_back(tb);
    const Location loc = p.testbenches.size();
    for (const auto& [k, it] : used) p.provenance[{loc, k}] = {it.source, it.evidence};
  }
  if (p.testbenches.empty()) p.testbenches.emplace_back();
  finalize(p, schema);
  return p;
}

}  // namespace cimdse
