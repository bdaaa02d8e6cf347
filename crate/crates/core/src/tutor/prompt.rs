use crate::envs::EnvKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("environment name must not be empty")]
    EmptyName,
    #[error("action dictionary must not be empty")]
    EmptyActions,
}

/// Renders `{0: "stick", 1: "hit"}`.
pub fn render_action_dictionary(actions: &[(usize, String)]) -> String {
    let entries: Vec<String> = actions.iter().map(|(k, v)| format!("{k}: \"{v}\"")).collect();
    format!("{{{}}}", entries.join(", "))
}

/// System message telling the model its teaching role, the game, the
/// observation format, the action dictionary and the output format.
pub fn build_system_prompt(env_name: &str, observation_description: &str, actions: &[(usize, String)]) -> Result<String, PromptError> {
    if env_name.trim().is_empty() {
        return Err(PromptError::EmptyName);
    }
    if actions.is_empty() {
        return Err(PromptError::EmptyActions);
    }
    Ok(format!(
        "You are a system used as a teacher for Reinforcement\n\
         learning (RL) agent. Your goal is to use your reasoning\n\
         to help with the convergence of optimal policy of\n\
         the RL agent.\n\
         The environment you will guide the agent is {env_name}\n\
         You will be given the {observation_description}.\n\
         \n\
         You can select an action from this dictionary: {}.\n\
         \n\
         Output: Clarify the current state and suggest the best\n\
         action for the agent to take. Output the action's\n\
         index (key from the actions dictionary) in the\n\
         <action></action> tags (e.g. <action>3</action>).",
        render_action_dictionary(actions)
    ))
}

pub fn system_prompt_for(kind: EnvKind) -> String {
    let actions: Vec<(usize, String)> = kind.action_names().into_iter().enumerate().collect();
    build_system_prompt(kind.display_name(), kind.observation_description(), &actions).expect("built-in environments are well formed")
}

/// Model-file text registering the system prompt server-side on top of `base_model`.
pub fn model_file(base_model: &str, system: &str) -> String {
    format!("FROM {base_model}\nSYSTEM \"\"\"\n{system}\n\"\"\"\n")
}
