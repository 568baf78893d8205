#ifndef RSSEG_CONFIG_HPP
#define RSSEG_CONFIG_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rsseg {

/// Ordered key = value document. Lines starting with '#' are comments.
class Config {
public:
  Config() = default;

  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  bool has(const std::string& key) const { return get(key).has_value(); }

  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string str() const;
  void save(const std::string& path) const;

private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

}  // namespace rsseg

#endif
