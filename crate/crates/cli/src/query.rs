//! Read-only queries against a loaded manager state: an agent's focus, a
//! cascade resolution with provider and depth, or the cascade tree.

use ctxcm_core::cascade::ResolvedValue;
use ctxcm_core::manager::ContextManager;
use ctxcm_core::model::AgentId;

use crate::replay::render_cascade;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Focus(AgentId),
    Resolve(AgentId, String),
    Cascade(AgentId),
}

/// Parses `focus <agent>`, `resolve <agent> <key>`, or `cascade <agent>`.
pub fn parse_selector(args: &[String]) -> Result<Selector, String> {
    match args {
        [kind, agent] if kind == "focus" => Ok(Selector::Focus(AgentId::from(agent.as_str()))),
        [kind, agent] if kind == "cascade" => Ok(Selector::Cascade(AgentId::from(agent.as_str()))),
        [kind, agent, key] if kind == "resolve" => Ok(Selector::Resolve(
            AgentId::from(agent.as_str()),
            key.clone(),
        )),
        _ => Err("expected `focus <agent>`, `resolve <agent> <key>` or `cascade <agent>`".into()),
    }
}

/// Answers a selector; errors name unknown agents or missing focus.
pub fn answer(manager: &ContextManager, selector: &Selector) -> Result<String, String> {
    match selector {
        Selector::Focus(agent) => {
            let focus = manager.current_focus(agent).map_err(|e| e.to_string())?;
            Ok(match focus {
                Some(ctx) => {
                    let class = context_class(manager, ctx);
                    format!("{agent} -> {ctx} ({class})")
                }
                None => format!("{agent} has no focus"),
            })
        }
        Selector::Resolve(agent, key) => {
            let focus = manager
                .current_focus(agent)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| format!("{agent} has no focus to resolve from"))?;
            let resolution = manager
                .engine()
                .cascade()
                .resolve(focus, key)
                .map_err(|e| e.to_string())?;
            Ok(match resolution {
                Some(r) => {
                    let provider_class = context_class(manager, r.provider);
                    let value = match r.value {
                        ResolvedValue::Attribute { value } => format!("\"{value}\""),
                        ResolvedValue::Resource { resource } => {
                            format!("resource {} \"{}\"", resource.id, resource.name)
                        }
                    };
                    format!(
                        "{key} = {value} (provider {} \"{provider_class}\", depth {})",
                        r.provider, r.depth
                    )
                }
                None => format!("{key}: not found in cascade"),
            })
        }
        Selector::Cascade(agent) => {
            let focus = manager
                .current_focus(agent)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| format!("{agent} has no focus"))?;
            let chain = manager
                .engine()
                .cascade()
                .chain(focus)
                .map_err(|e| e.to_string())?;
            let tree = render_cascade(manager.engine().cascade());
            // Restrict the tree to the agent's focus chain.
            let lines: Vec<String> = tree
                .into_iter()
                .filter(|line| {
                    chain
                        .iter()
                        .any(|ctx| line.trim_start().starts_with(&format!("{ctx} ")))
                })
                .collect();
            Ok(lines.join("\n"))
        }
    }
}

fn context_class(manager: &ContextManager, ctx: ctxcm_core::cascade::ContextId) -> String {
    manager
        .engine()
        .cascade()
        .context(ctx)
        .ok()
        .and_then(|c| manager.engine().cascade().activity(c.activity).ok())
        .map(|a| {
            manager
                .engine()
                .ontology()
                .activity_classes
                .get(&a.class_id)
                .map(|class| class.name.clone())
                .unwrap_or_else(|| a.class_id.to_string())
        })
        .unwrap_or_default()
}
