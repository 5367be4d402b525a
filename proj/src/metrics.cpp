#include "hot/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace hot {

void ConfusionCounts::add(int predicted, int actual) {
  if (predicted)
    ++(actual ? tp : fp);
  else
    ++(actual ? fn : tn);
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> actual, std::span<const int> valid) {
  if (predicted.size() != actual.size() || (!valid.empty() && valid.size() != actual.size()))
    throw std::invalid_argument("confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (valid.empty() || valid[i]) c.add(predicted[i], actual[i]);
  return c;
}

double mcc(const ConfusionCounts& c) {
  const double tp = double(c.tp), tn = double(c.tn), fp = double(c.fp), fn = double(c.fn);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(den);
}

AccuracyF1 accuracy_f1(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("accuracy_f1: no scored predictions");
  AccuracyF1 r;
  r.accuracy = double(c.tp + c.tn) / double(c.total());
  const double den = 2.0 * double(c.tp) + double(c.fp) + double(c.fn);
  r.f1 = den == 0.0 ? 0.0 : 2.0 * double(c.tp) / den;
  return r;
}

}  // namespace hot
