// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "empath/common.hpp"

namespace empath::evalkit {

using Tokens = std::vector<std::string>;

/// Metric preprocessing: lowercase, strip ASCII punctuation, split on whitespace.
Tokens metric_tokenize(const std::string& text);

/// Corpus-level BLEU-n: clipped modified n-gram precision, geometric mean over
/// orders 1..n, brevity penalty. Zero precisions are smoothed to 1e-9 unless
/// every order has zero matches, in which case the score is exactly 0.
double bleu_n(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
              int n, std::vector<std::string>* warnings = nullptr);
double bleu_n(const Tokens& candidate, const Tokens& reference, int n,
              std::vector<std::string>* warnings = nullptr);

struct RougeScores {
  double r1 = 0.0;
  double r2 = 0.0;
  double rl = 0.0;
};

/// ROUGE-1/2 n-gram F1 and ROUGE-L (longest common subsequence F1).
RougeScores rouge(const Tokens& candidate, const Tokens& reference);

/// Unique n-grams over total n-grams across the whole response corpus.
double distinct_n(const std::vector<Tokens>& responses, int n,
                  std::vector<std::string>* warnings = nullptr);

struct MetricReport {
  std::array<double, 4> bleu{};  // BLEU-1..4
  RougeScores rouge;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  Index n_samples = 0;
};

MetricReport evaluate_corpus(const std::vector<std::string>& predictions,
                             const std::vector<std::string>& references,
                             std::vector<std::string>* warnings = nullptr);

std::string metric_report_to_json(const MetricReport& report);
/// Fixed-width table: BLEU-1/2/3/4 | ROUGE-1/2/L | Dist-1/2.
std::string metric_report_table(const MetricReport& report);

// ---------------------------------------------------------------------------
// Judge prompts
// ---------------------------------------------------------------------------

enum class JudgeDimension { Quality, Empathy, Completeness, Fluency };

JudgeDimension judge_dimension_from_name(const std::string& name);

/// Byte-exact prompt for one evaluation dimension. Substitution is literal:
/// braces in the instruction/response text survive unescaped.
std::string render_eval_prompt(JudgeDimension dimension, const std::string& instruction,
                               const std::string& response);

/// Extracts the first well-formed <score>...</score> number; validates [0, 10].
double parse_score(const std::string& judge_reply);

/// Minimal interface for an external judge backend; tests use a canned fake.
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

}  // namespace empath::evalkit
