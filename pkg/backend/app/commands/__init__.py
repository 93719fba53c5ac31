"""命令行子命令：gen / solve / sweep / verify / report"""
