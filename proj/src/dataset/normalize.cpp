#include "mmv/dataset/normalize.hpp"

#include <algorithm>
#include <cmath>

namespace mmv::data {

namespace {

void fit_moments(std::size_t n_fields, std::span<const std::vector<double>> rows, std::vector<double>& mean,
                 std::vector<double>& stdev) {
  mean.assign(n_fields, 0.0);
  stdev.assign(n_fields, 1.0);
  if (rows.empty()) return;
  for (const auto& row : rows)
    for (std::size_t j = 0; j < n_fields; ++j) mean[j] += row[j];
  for (auto& m : mean) m /= static_cast<double>(rows.size());
  for (std::size_t j = 0; j < n_fields; ++j) {
    double var = 0.0;
    for (const auto& row : rows) var += (row[j] - mean[j]) * (row[j] - mean[j]);
    var /= static_cast<double>(rows.size());
    stdev[j] = std::max(std::sqrt(var), kStdFloor);
  }
}

}  // namespace

void TabularNormalizer::build_layout() {
  layout_.clear();
  std::size_t offset = 0;
  for (const auto& name : numeric_) layout_.push_back({name, offset++, 1, false});
  for (const auto& field : categorical_) {
    layout_.push_back({field.name, offset, field.vocab.size() + 1, true});
    offset += field.vocab.size() + 1;
  }
}

TabularNormalizer TabularNormalizer::fit(const EhrSchema& schema, std::span<const EhrVector> rows) {
  TabularNormalizer n;
  n.numeric_ = schema.numeric;
  n.categorical_ = schema.categorical;
  std::vector<std::vector<double>> numeric;
  for (const auto& row : rows) {
    if (row.numeric.size() != schema.numeric.size() || row.categorical.size() != schema.categorical.size())
      throw DataError("EHR row does not match the declared schema");
    numeric.push_back(row.numeric);
  }
  fit_moments(schema.numeric.size(), numeric, n.mean_, n.std_);
  n.build_layout();
  return n;
}

TabularNormalizer TabularNormalizer::fit(const std::vector<std::string>& names,
                                         std::span<const std::vector<double>> rows) {
  TabularNormalizer n;
  n.numeric_ = names;
  for (const auto& row : rows)
    if (row.size() != names.size()) throw DataError("feature row does not match the declared schema");
  fit_moments(names.size(), rows, n.mean_, n.std_);
  n.build_layout();
  return n;
}

std::size_t TabularNormalizer::width() const {
  return layout_.empty() ? 0 : layout_.back().offset + layout_.back().width;
}

std::vector<double> TabularNormalizer::transform(std::span<const double> numeric) const {
  if (numeric.size() != numeric_.size() || !categorical_.empty())
    throw DataError("feature row does not match the normalizer schema");
  std::vector<double> out(width(), 0.0);
  for (std::size_t j = 0; j < numeric.size(); ++j) out[j] = (numeric[j] - mean_[j]) / std_[j];
  return out;
}

std::vector<double> TabularNormalizer::transform(const EhrVector& row) const {
  if (row.numeric.size() != numeric_.size() || row.categorical.size() != categorical_.size())
    throw DataError("EHR row does not match the normalizer schema");
  std::vector<double> out(width(), 0.0);
  for (std::size_t j = 0; j < numeric_.size(); ++j) out[j] = (row.numeric[j] - mean_[j]) / std_[j];
  for (std::size_t c = 0; c < categorical_.size(); ++c) {
    const auto& slot = layout_[numeric_.size() + c];
    const auto& vocab = categorical_[c].vocab;
    const auto it = std::find(vocab.begin(), vocab.end(), row.categorical[c]);
    const std::size_t k = it == vocab.end() ? vocab.size() : static_cast<std::size_t>(it - vocab.begin());
    out[slot.offset + k] = 1.0;
  }
  return out;
}

nlohmann::json TabularNormalizer::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : categorical_) cats.push_back({{"name", c.name}, {"vocab", c.vocab}});
  return {{"numeric", numeric_}, {"categorical", cats}, {"mean", mean_}, {"std", std_}};
}

TabularNormalizer TabularNormalizer::from_json(const nlohmann::json& j) {
  TabularNormalizer n;
  n.numeric_ = j.at("numeric").get<std::vector<std::string>>();
  for (const auto& c : j.at("categorical"))
    n.categorical_.push_back({c.at("name").get<std::string>(), c.at("vocab").get<std::vector<std::string>>()});
  n.mean_ = j.at("mean").get<std::vector<double>>();
  n.std_ = j.at("std").get<std::vector<double>>();
  if (n.mean_.size() != n.numeric_.size() || n.std_.size() != n.numeric_.size())
    throw DataError("normalizer statistics do not match its field list");
  n.build_layout();
  return n;
}

TabularNormalizer fit_ehr_normalizer(const Dataset& dataset, std::span<const std::size_t> train) {
  std::vector<EhrVector> rows;
  for (auto i : train) rows.push_back(dataset.cycles.at(i).ehr);
  return TabularNormalizer::fit(dataset.ehr_schema, rows);
}

TabularNormalizer fit_interp_normalizer(const Dataset& dataset, std::span<const std::size_t> train) {
  std::vector<std::vector<double>> rows;
  for (auto i : train)
    for (const auto& e : dataset.cycles.at(i).embryos)
      if (e.interp) rows.push_back(*e.interp);
  return TabularNormalizer::fit(dataset.interp_schema, rows);
}

}  // namespace mmv::data
