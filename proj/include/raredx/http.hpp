#pragma once

// HTTP/JSON front end for SessionManager.
//   POST /sessions {kb, policy, eps}       POST /sessions/{id}/answers {code, presence}
//   GET  /sessions/{id}                    POST /sessions/{id}/close
//   GET  /sessions/{id}/posterior          GET  /sessions/{id}/recommendations
//   GET  /healthz
// Errors: {"code", "message", "details"}.

#include "raredx/service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <string>

namespace raredx {

inline int http_status(Errc e) {
    switch (e) {
    case Errc::not_found: return 404;
    case Errc::conflict:
    case Errc::evidence_impossible: return 409;
    case Errc::too_imprecise: return 422;
    case Errc::schema:
    case Errc::invalid_argument:
    case Errc::unknown_code:
    case Errc::dimension: return 400;
    default: return 500;
    }
}

inline json error_json(const std::string& code, const std::string& message, const std::string& details = {}) {
    return {{"schema", kApiSchema}, {"code", code}, {"message", message}, {"details", details}};
}

inline json posterior_json(const SessionView& v) {
    json full = view_json(v);
    return {{"schema", kApiSchema}, {"session", v.id}, {"status", v.status}, {"scope", v.scope},
            {"entropy", v.entropy}, {"eps", v.eps}, {"posterior", full["posterior"]}, {"advisories", v.advisories}};
}

inline json recommendations_json(const SessionView& v) {
    json full = view_json(v);
    return {{"schema", kApiSchema},  {"session", v.id}, {"status", v.status}, {"scope", v.scope},
            {"policy_kind", v.policy_kind}, {"recommendations", full["recommendations"]}};
}

inline void install_routes(httplib::Server& srv, SessionManager& mgr) {
    auto reply = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    auto guarded = [reply](auto handler) {
        return [reply, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const Error& e) {
                reply(res, http_status(e.code()), error_json(errc_name(e.code()), e.message(), e.details()));
            } catch (const json::exception& e) {
                reply(res, 400, error_json("schema", "malformed request body", e.what()));
            } catch (const std::exception& e) {
                reply(res, 500, error_json("internal", e.what()));
            }
        };
    };
    auto body = [](const httplib::Request& req) {
        if (req.body.empty()) return json::object();
        json j = json::parse(req.body);
        if (!j.is_object()) fail(Errc::schema, "request body must be a JSON object");
        return j;
    };

    srv.Get("/healthz", guarded([&mgr, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, {{"schema", kApiSchema}, {"status", "ok"}, {"kbs", mgr.kb_ids()}, {"policies", mgr.policy_ids()},
                         {"sessions", mgr.size()}});
    }));
    srv.Post("/sessions", guarded([&mgr, reply, body](const httplib::Request& req, httplib::Response& res) {
        const json j = body(req);
        const auto kbs = mgr.kb_ids();
        std::string kb = j.value("kb", kbs.size() == 1 ? kbs[0] : std::string());
        std::string policy = j.value("policy", std::string("greedy"));
        std::optional<double> eps;
        if (j.contains("eps") && !j.at("eps").is_null()) eps = j.at("eps").get<double>();
        reply(res, 201, view_json(mgr.create(kb, policy, eps)));
    }));
    srv.Get(R"(/sessions/([^/]+))", guarded([&mgr, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, 200, view_json(mgr.view(req.matches[1])));
    }));
    srv.Post(R"(/sessions/([^/]+)/answers)", guarded([&mgr, reply, body](const httplib::Request& req, httplib::Response& res) {
        const json j = body(req);
        if (!j.contains("code") || !j.at("code").is_string()) fail(Errc::schema, "field 'code' (string) is required", "$.code");
        if (!j.contains("presence") || !j.at("presence").is_boolean()) {
            fail(Errc::schema, "field 'presence' (boolean) is required", "$.presence");
        }
        reply(res, 200, view_json(mgr.answer(req.matches[1], j.at("code").get<std::string>(), j.at("presence").get<bool>())));
    }));
    srv.Post(R"(/sessions/([^/]+)/close)", guarded([&mgr, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, 200, view_json(mgr.close(req.matches[1])));
    }));
    srv.Get(R"(/sessions/([^/]+)/posterior)", guarded([&mgr, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, 200, posterior_json(mgr.view(req.matches[1])));
    }));
    srv.Get(R"(/sessions/([^/]+)/recommendations)", guarded([&mgr, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, 200, recommendations_json(mgr.view(req.matches[1])));
    }));
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
}

} // namespace raredx
