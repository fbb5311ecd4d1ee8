# Learning agents: populations, learner rules and episodes
