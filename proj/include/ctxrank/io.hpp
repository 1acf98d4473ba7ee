#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxrank/session.hpp"

namespace ctxrank {

// JSONL codecs. One object per line; keys written in the documented order so
// re-runs produce byte-identical files.

namespace detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  return f;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  return f;
}

}  // namespace detail

inline nlohmann::ordered_json session_to_json(const QuerySession& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.session_id;
  if (s.user_id) {
    j["user_id"] = *s.user_id;
  } else {
    j["user_id"] = nullptr;
  }
  j["query"] = s.query;
  j["week"] = s.week;
  nlohmann::ordered_json pages = nlohmann::ordered_json::array();
  for (const Page& p : s.pages) {
    nlohmann::ordered_json jp;
    jp["page_no"] = p.page_no;
    jp["items"] = p.items;
    jp["clicks"] = p.clicks;
    jp["purchases"] = p.purchases;
    pages.push_back(std::move(jp));
  }
  j["pages"] = std::move(pages);
  return j;
}

inline QuerySession session_from_json(const nlohmann::json& j) {
  QuerySession s;
  s.session_id = j.at("session_id").get<std::int64_t>();
  if (j.contains("user_id") && !j.at("user_id").is_null()) {
    s.user_id = j.at("user_id").get<UserId>();
  }
  s.query = j.at("query").get<Tokens>();
  s.week = j.at("week").get<int>();
  for (const auto& jp : j.at("pages")) {
    Page p;
    p.page_no = jp.at("page_no").get<int>();
    p.items = jp.at("items").get<std::vector<ItemId>>();
    p.clicks = jp.at("clicks").get<std::vector<ItemId>>();
    p.purchases = jp.at("purchases").get<std::vector<ItemId>>();
    detail::sort_unique(p.clicks);
    detail::sort_unique(p.purchases);
    s.pages.push_back(std::move(p));
  }
  return s;
}

inline void save_sessions(const std::string& path, const std::vector<QuerySession>& log) {
  auto f = detail::open_out(path);
  for (const QuerySession& s : log) f << session_to_json(s).dump() << '\n';
}

inline std::vector<QuerySession> load_sessions(const std::string& path, bool validate = true) {
  auto f = detail::open_in(path);
  std::vector<QuerySession> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(session_from_json(nlohmann::json::parse(line)));
      if (validate) validate_session(out.back());
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void save_catalog(const std::string& path, const Catalog& catalog) {
  auto f = detail::open_out(path);
  std::vector<ItemId> ids;
  ids.reserve(catalog.products.size());
  for (const auto& [id, _] : catalog.products) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (ItemId id : ids) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["title"] = catalog.at(id).title;
    f << j.dump() << '\n';
  }
}

inline Catalog load_catalog(const std::string& path) {
  auto f = detail::open_in(path);
  Catalog catalog;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Product p;
      p.id = j.at("id").get<ItemId>();
      p.title = j.at("title").get<Tokens>();
      if (p.id < 0) throw std::invalid_argument("negative item id");
      if (!catalog.products.emplace(p.id, std::move(p)).second)
        throw std::invalid_argument("duplicate item id");
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return catalog;
}

// Every item referenced by the log must exist in the catalog.
inline void check_log_against_catalog(const std::vector<QuerySession>& log, const Catalog& catalog) {
  for (const QuerySession& s : log) {
    for (const Page& p : s.pages) {
      for (ItemId it : p.items) {
        if (!catalog.contains(it))
          throw std::invalid_argument("session " + std::to_string(s.session_id) +
                                      " references unknown item " + std::to_string(it));
      }
    }
  }
}

}  // namespace ctxrank
