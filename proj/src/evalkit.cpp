// SPDX-License-Identifier: Apache-2.0
#include "empath/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <sstream>

#include "json.hpp"

namespace empath::evalkit {

Tokens metric_tokenize(const std::string& text) {
  Tokens out;
  std::string word;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isspace(u) || std::ispunct(u)) {
      if (!word.empty()) {
        out.push_back(word);
        word.clear();
      }
    } else {
      word.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!word.empty()) out.push_back(word);
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts count_ngrams(const Tokens& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                      tokens.begin() + static_cast<long>(i) + n)];
  return counts;
}

}  // namespace

double bleu_n(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
              int n, std::vector<std::string>* warnings) {
  require(n >= 1 && n <= 4, "BLEU order must be in 1..4");
  require(candidates.size() == references.size(), "BLEU: candidate/reference count mismatch");
  require(!candidates.empty(), "BLEU: empty corpus");

  long cand_len = 0, ref_len = 0;
  std::vector<long> matches(static_cast<std::size_t>(n), 0);
  std::vector<long> totals(static_cast<std::size_t>(n), 0);
  bool any_empty = false;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const Tokens& c = candidates[s];
    const Tokens& r = references[s];
    if (c.empty()) any_empty = true;
    cand_len += static_cast<long>(c.size());
    ref_len += static_cast<long>(r.size());
    for (int k = 1; k <= n; ++k) {
      const NgramCounts cc = count_ngrams(c, k);
      const NgramCounts rc = count_ngrams(r, k);
      for (const auto& [gram, count] : cc) {
        const auto it = rc.find(gram);
        const long clipped = it == rc.end() ? 0 : std::min(count, it->second);
        matches[static_cast<std::size_t>(k - 1)] += clipped;
        totals[static_cast<std::size_t>(k - 1)] += count;
      }
    }
  }
  if (any_empty && warnings) warnings->push_back("BLEU: empty candidate scored as 0");
  if (cand_len == 0) {
    if (warnings) warnings->push_back("BLEU: all candidates empty");
    return 0.0;
  }

  bool all_zero = true;
  for (int k = 0; k < n; ++k)
    if (matches[static_cast<std::size_t>(k)] > 0) all_zero = false;
  if (all_zero) return 0.0;

  // Orders with no candidate n-grams at all (0/0) are undefined, not zero;
  // they drop out of the geometric mean so identity stays exactly 1.
  constexpr double kZeroPrecision = 1e-9;
  double log_sum = 0.0;
  int counted = 0;
  for (int k = 0; k < n; ++k) {
    const long total = totals[static_cast<std::size_t>(k)];
    if (total == 0) continue;
    double p = static_cast<double>(matches[static_cast<std::size_t>(k)]) / total;
    if (p == 0.0) p = kZeroPrecision;
    log_sum += std::log(p);
    ++counted;
  }
  log_sum /= counted;
  const double bp =
      cand_len >= ref_len ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
  return bp * std::exp(log_sum);
}

double bleu_n(const Tokens& candidate, const Tokens& reference, int n,
              std::vector<std::string>* warnings) {
  return bleu_n(std::vector<Tokens>{candidate}, std::vector<Tokens>{reference}, n, warnings);
}

namespace {

double ngram_f1(const Tokens& candidate, const Tokens& reference, int n) {
  const NgramCounts cc = count_ngrams(candidate, n);
  const NgramCounts rc = count_ngrams(reference, n);
  long overlap = 0, c_total = 0, r_total = 0;
  for (const auto& [gram, count] : cc) {
    c_total += count;
    const auto it = rc.find(gram);
    if (it != rc.end()) overlap += std::min(count, it->second);
  }
  for (const auto& [gram, count] : rc) r_total += count;
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / c_total;
  const double r = static_cast<double>(overlap) / r_total;
  return 2.0 * p * r / (p + r);
}

long lcs_length(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

RougeScores rouge(const Tokens& candidate, const Tokens& reference) {
  RougeScores s;
  if (candidate.empty() && reference.empty()) return s;  // defined as 0
  s.r1 = ngram_f1(candidate, reference, 1);
  s.r2 = ngram_f1(candidate, reference, 2);
  const long lcs = lcs_length(candidate, reference);
  if (lcs > 0 && !candidate.empty() && !reference.empty()) {
    const double p = static_cast<double>(lcs) / candidate.size();
    const double r = static_cast<double>(lcs) / reference.size();
    s.rl = 2.0 * p * r / (p + r);
  }
  return s;
}

double distinct_n(const std::vector<Tokens>& responses, int n,
                  std::vector<std::string>* warnings) {
  require(!responses.empty(), "distinct_n: empty corpus");
  NgramCounts seen;
  long total = 0;
  for (const auto& resp : responses) {
    for (auto& [gram, count] : count_ngrams(resp, n)) {
      seen[gram] += count;
      total += count;
    }
  }
  if (total == 0) {
    if (warnings) warnings->push_back("distinct-" + std::to_string(n) + ": no n-grams in corpus");
    return 0.0;
  }
  return static_cast<double>(seen.size()) / total;
}

MetricReport evaluate_corpus(const std::vector<std::string>& predictions,
                             const std::vector<std::string>& references,
                             std::vector<std::string>* warnings) {
  require(!predictions.empty(), "no predictions to evaluate");
  require(predictions.size() == references.size(),
          "predictions and references must have the same length");
  std::vector<Tokens> cand, ref;
  cand.reserve(predictions.size());
  ref.reserve(references.size());
  for (const auto& p : predictions) cand.push_back(metric_tokenize(p));
  for (const auto& r : references) ref.push_back(metric_tokenize(r));

  MetricReport report;
  report.n_samples = static_cast<Index>(predictions.size());
  for (int n = 1; n <= 4; ++n)
    report.bleu[static_cast<std::size_t>(n - 1)] = bleu_n(cand, ref, n, warnings);
  double r1 = 0.0, r2 = 0.0, rl = 0.0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const RougeScores s = rouge(cand[i], ref[i]);
    r1 += s.r1;
    r2 += s.r2;
    rl += s.rl;
  }
  report.rouge.r1 = r1 / static_cast<double>(cand.size());
  report.rouge.r2 = r2 / static_cast<double>(cand.size());
  report.rouge.rl = rl / static_cast<double>(cand.size());
  report.distinct1 = distinct_n(cand, 1, warnings);
  report.distinct2 = distinct_n(cand, 2, warnings);
  return report;
}

std::string metric_report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["bleu"] = {report.bleu[0], report.bleu[1], report.bleu[2], report.bleu[3]};
  j["rouge"] = {{"r1", report.rouge.r1}, {"r2", report.rouge.r2}, {"rl", report.rouge.rl}};
  j["distinct"] = {{"d1", report.distinct1}, {"d2", report.distinct2}};
  j["n_samples"] = report.n_samples;
  return j.dump(2);
}

std::string metric_report_table(const MetricReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "BLEU-1  BLEU-2  BLEU-3  BLEU-4  ROU-1   ROU-2   ROU-L   Dist-1  Dist-2\n";
  for (double b : report.bleu) os << b << "  ";
  os << report.rouge.r1 << "  " << report.rouge.r2 << "  " << report.rouge.rl << "  "
     << report.distinct1 << "  " << report.distinct2 << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Judge prompts
// ---------------------------------------------------------------------------

JudgeDimension judge_dimension_from_name(const std::string& name) {
  if (name == "quality") return JudgeDimension::Quality;
  if (name == "empathy") return JudgeDimension::Empathy;
  if (name == "completeness") return JudgeDimension::Completeness;
  if (name == "fluency") return JudgeDimension::Fluency;
  throw ValidationError("unknown evaluation dimension: " + name);
}

std::string render_eval_prompt(JudgeDimension dimension, const std::string& instruction,
                               const std::string& response) {
  std::string noun, criteria;
  switch (dimension) {
    case JudgeDimension::Quality:
      noun = "quality";
      criteria = "the helpfulness, harmlessness, and honesty of the response";
      break;
    case JudgeDimension::Empathy:
      noun = "empathy";
      criteria = "whether it shows empathy and appropriate emotional understanding";
      break;
    case JudgeDimension::Completeness:
      noun = "completeness";
      criteria =
          "whether it adequately addresses all aspects of the user's needs without omitting "
          "important information";
      break;
    case JudgeDimension::Fluency:
      noun = "fluency";
      criteria =
          "the naturalness, coherence, and linguistic quality of the generated response";
      break;
  }
  std::string s;
  s += "Given the conversation history and the model's response. You are a helpful and precise "
       "assistant for checking the " + noun + " of the response.\n\n";
  s += "<instruction>\n" + instruction + "\n</instruction>\n";
  s += "<response>\n" + response + "\n</response>\n\n";
  s += "Please evaluate the response with your justification having less than three sentences, "
       "and provide a score ranging from 0 to 10 after your justification. When evaluating the "
       "response, you should consider " + criteria +
       ". The score should be wrapped by <score> and </score>.";
  return s;
}

double parse_score(const std::string& judge_reply) {
  static const std::regex tag("<score>([\\s\\S]*?)</score>");
  auto begin = std::sregex_iterator(judge_reply.begin(), judge_reply.end(), tag);
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    std::string body = (*it)[1].str();
    // trim whitespace
    const auto lo = body.find_first_not_of(" \t\r\n");
    if (lo == std::string::npos) continue;
    const auto hi = body.find_last_not_of(" \t\r\n");
    body = body.substr(lo, hi - lo + 1);
    std::size_t consumed = 0;
    double value = 0.0;
    try {
      value = std::stod(body, &consumed);
    } catch (const std::exception&) {
      continue;
    }
    if (consumed != body.size()) continue;  // trailing junk -> not well-formed
    if (value < 0.0 || value > 10.0)
      throw ValidationError("score out of range [0, 10]: " + body);
    return value;
  }
  throw ValidationError("no score found");
}

}  // namespace empath::evalkit
