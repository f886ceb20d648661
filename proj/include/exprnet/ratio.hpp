#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>

#include "exprnet/error.hpp"

namespace exprnet {

/// Exact non-negative rational number. Used wherever a rounding rule must be
/// reproducible bit-for-bit (resampling targets, width multipliers).
struct Ratio {
  std::int64_t num = 1;
  std::int64_t den = 1;

  constexpr Ratio() = default;
  constexpr Ratio(std::int64_t n, std::int64_t d = 1) : num(n), den(d) { normalize(); }

  constexpr void normalize() {
    if (den == 0) throw ValueError("ratio with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool positive() const { return num > 0; }

  /// floor(n * num / den + 1/2), computed in integers.
  std::int64_t round_half_up_times(std::int64_t n) const {
    const __int128 top = static_cast<__int128>(2) * n * num + den;
    const __int128 bottom = static_cast<__int128>(2) * den;
    __int128 q = top / bottom;
    if (top % bottom != 0 && (top < 0) != (bottom < 0)) --q;
    return static_cast<std::int64_t>(q);
  }

  /// True when n * num / den is an integer.
  bool divides_evenly(std::int64_t n) const { return (n * num) % den == 0; }

  std::string to_string() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
  }

  friend constexpr bool operator==(const Ratio& a, const Ratio& b) {
    return a.num == b.num && a.den == b.den;
  }
  friend bool operator<(const Ratio& a, const Ratio& b) {
    return static_cast<__int128>(a.num) * b.den < static_cast<__int128>(b.num) * a.den;
  }
  friend bool operator<=(const Ratio& a, const Ratio& b) { return !(b < a); }
};

namespace detail {

inline std::int64_t parse_digits(std::string_view s, std::string_view whole) {
  if (s.empty()) throw ValueError("malformed number '" + std::string(whole) + "'");
  std::int64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw ValueError("malformed number '" + std::string(whole) + "'");
    if (v > (INT64_MAX - 9) / 10) throw ValueError("number too large '" + std::string(whole) + "'");
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace detail

/// Parses "3", "7/4", "0.25" or "-1.5" into an exact ratio. Decimal literals
/// are taken at face value (0.2 == 1/5), not via binary floating point.
inline Ratio parse_ratio(std::string_view text) {
  std::string_view s = text;
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  Ratio r;
  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    r = Ratio(detail::parse_digits(s.substr(0, slash), text),
              detail::parse_digits(s.substr(slash + 1), text));
  } else if (const auto dot = s.find('.'); dot != std::string_view::npos) {
    const auto int_part = s.substr(0, dot);
    const auto frac_part = s.substr(dot + 1);
    if (frac_part.size() > 15) throw ValueError("too many decimals in '" + std::string(text) + "'");
    std::int64_t den = 1;
    for (std::size_t i = 0; i < frac_part.size(); ++i) den *= 10;
    const std::int64_t ip = int_part.empty() ? 0 : detail::parse_digits(int_part, text);
    const std::int64_t fp = frac_part.empty() ? 0 : detail::parse_digits(frac_part, text);
    if (int_part.empty() && frac_part.empty()) throw ValueError("malformed number '" + std::string(text) + "'");
    r = Ratio(ip * den + fp, den);
  } else {
    r = Ratio(detail::parse_digits(s, text), 1);
  }
  if (negative) r = Ratio(-r.num, r.den);
  return r;
}

}  // namespace exprnet
